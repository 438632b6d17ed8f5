"""OpenAI-compatible serving shim for a trained rewriter checkpoint.

Exposes POST /v1/chat/completions with the fields the engine sends
(model, messages, temperature, top_p, max_tokens) and returns the
generated continuation as the assistant message.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI
from pydantic import BaseModel, Field

from .model import generate
from .train import load_checkpoint


class ChatMessage(BaseModel):
    role: str
    content: str


class ChatRequest(BaseModel):
    model: str = "rewriter"
    messages: list[ChatMessage]
    temperature: float = 0.0
    top_p: float = Field(default=0.9, gt=0.0, le=1.0)
    max_tokens: int = 256


def create_app(checkpoint_dir: str | Path) -> FastAPI:
    model, tokenizer, meta = load_checkpoint(checkpoint_dir)
    app = FastAPI(title="rewriter shim")

    @app.get("/health")
    def health():
        return {"status": "ok", "steps": meta["steps"]}

    @app.post("/v1/chat/completions")
    def chat(request: ChatRequest):
        prompt = "\n".join(m.content for m in request.messages if m.role != "system")
        prompt_ids = tokenizer.encode(prompt, add_bos=True)
        output_ids = generate(
            model,
            prompt_ids,
            max_new_tokens=request.max_tokens,
            temperature=request.temperature,
            top_p=request.top_p,
        )
        text = tokenizer.decode(output_ids)
        return {
            "object": "chat.completion",
            "model": request.model,
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": text},
                    "finish_reason": "stop",
                }
            ],
            "usage": {
                "prompt_tokens": len(prompt_ids),
                "completion_tokens": len(output_ids),
            },
        }

    return app
