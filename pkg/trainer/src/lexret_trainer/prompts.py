"""Instruction prompt shared with the retrieval engine.

The engine renders the same template at inference time; the byte-level
parity of the two renderings is part of the cross-package contract and
is covered by a test. Keep this text in sync with the engine's rewrite
templates.
"""

from __future__ import annotations

INSTRUCTION_PROMPT = (
    "You are a helpful assistant specializing in generating legal passages "
    "that naturally align with the preceding context.\n"
    "\n"
    "Based on the given preceding context, please generate a legal passage "
    "that is coherent, relevant, and contextually appropriate.\n"
    "\n"
    "### Preceding Context : {Context}\n"
    "\n"
    "### Legal Passage : {Passage}"
)

COMPLETION_MARKER = "### Legal Passage :"


def render_instruction(context: str, passage: str | None = None) -> str:
    """Render the instruction prompt.

    With a passage this is a training record; without one the text ends
    right after the completion marker, ready for generation.
    """
    body = INSTRUCTION_PROMPT
    if passage is None:
        body = body.replace(" {Passage}", "")
    else:
        body = body.replace("{Passage}", passage)
    return body.replace("{Context}", context)
