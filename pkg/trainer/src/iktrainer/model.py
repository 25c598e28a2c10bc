"""Tiny word-level causal language model.

There is no model hub in the offline test environment, so the built-in
"tiny-causal" base is a from-scratch 2-layer pre-LN transformer over a
word-level vocabulary built from the trainset. It is deliberately small:
the point is a CPU-trainable causal LM whose next-token head can be taught
to emit Yes/No, not language modeling quality. A previously saved model
directory can be loaded and fine-tuned further.
"""

from __future__ import annotations

import json

from pathlib import Path

import torch
import torch.nn as nn

PAD, UNK, BOS = "<pad>", "<unk>", "<bos>"
SPECIALS = (PAD, UNK, BOS, "Yes", "No")


class WordTokenizer:
    """Whitespace word-level vocabulary; Yes/No are guaranteed single tokens."""

    def __init__(self, vocab: list[str]):
        self.vocab = list(vocab)
        self.index = {tok: i for i, tok in enumerate(self.vocab)}

    @classmethod
    def build(cls, texts: list[str], max_vocab: int = 8000) -> "WordTokenizer":
        counts: dict[str, int] = {}
        for text in texts:
            for tok in text.split():
                counts[tok] = counts.get(tok, 0) + 1
        for special in SPECIALS:
            counts.pop(special, None)
        ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        vocab = list(SPECIALS) + [tok for tok, _ in ordered[: max_vocab - len(SPECIALS)]]
        return cls(vocab)

    def __len__(self) -> int:
        return len(self.vocab)

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def yes_id(self) -> int:
        return self.index["Yes"]

    @property
    def no_id(self) -> int:
        return self.index["No"]

    def encode(self, text: str, max_len: int) -> list[int]:
        unk = self.index[UNK]
        ids = [self.index[BOS]] + [self.index.get(tok, unk) for tok in text.split()]
        return ids[-max_len:]  # keep the tail so the next-token position survives

    def save(self, path: Path) -> None:
        path.write_text(json.dumps({"vocab": self.vocab}, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "WordTokenizer":
        return cls(json.loads(path.read_text(encoding="utf-8"))["vocab"])


class TinyCausalLM(nn.Module):
    """Pre-LN causal transformer with a next-token head."""

    def __init__(
        self,
        vocab_size: int,
        d_model: int = 128,
        n_heads: int = 2,
        n_layers: int = 2,
        max_len: int = 192,
    ):
        super().__init__()
        self.config = {
            "vocab_size": vocab_size,
            "d_model": d_model,
            "n_heads": n_heads,
            "n_layers": n_layers,
            "max_len": max_len,
        }
        self.tok_emb = nn.Embedding(vocab_size, d_model)
        self.pos_emb = nn.Embedding(max_len, d_model)
        layer = nn.TransformerEncoderLayer(
            d_model=d_model,
            nhead=n_heads,
            dim_feedforward=4 * d_model,
            batch_first=True,
            norm_first=True,
            dropout=0.0,
        )
        self.blocks = nn.TransformerEncoder(layer, num_layers=n_layers, enable_nested_tensor=False)
        self.final_norm = nn.LayerNorm(d_model)
        self.head = nn.Linear(d_model, vocab_size, bias=False)

    def forward(self, ids: torch.Tensor, pad_id: int) -> torch.Tensor:
        """ids: (B, T) right-padded. Returns (B, T, V) next-token logits."""
        batch, seq = ids.shape
        positions = torch.arange(seq, device=ids.device).unsqueeze(0)
        x = self.tok_emb(ids) + self.pos_emb(positions)
        causal = torch.triu(torch.ones(seq, seq, device=ids.device, dtype=torch.bool), diagonal=1)
        padding = ids == pad_id
        x = self.blocks(x, mask=causal, src_key_padding_mask=padding)
        return self.head(self.final_norm(x))

    def next_token_logits(self, ids: torch.Tensor, lengths: torch.Tensor, pad_id: int) -> torch.Tensor:
        """Logits at each sequence's last real position: (B, V)."""
        logits = self.forward(ids, pad_id)
        rows = torch.arange(ids.shape[0], device=ids.device)
        return logits[rows, lengths - 1]


def save_model(model: TinyCausalLM, tokenizer: WordTokenizer, out_dir: Path, metadata: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save({"config": model.config, "state": model.state_dict()}, out_dir / "model.pt")
    tokenizer.save(out_dir / "tokenizer.json")
    (out_dir / "metadata.json").write_text(
        json.dumps(metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_model(model_dir: str | Path) -> tuple[TinyCausalLM, WordTokenizer, dict]:
    model_dir = Path(model_dir)
    for required in ("model.pt", "tokenizer.json", "metadata.json"):
        if not (model_dir / required).exists():
            raise FileNotFoundError(f"model directory {model_dir} lacks {required}")
    blob = torch.load(model_dir / "model.pt", map_location="cpu", weights_only=True)
    model = TinyCausalLM(**blob["config"])
    model.load_state_dict(blob["state"])
    model.eval()
    tokenizer = WordTokenizer.load(model_dir / "tokenizer.json")
    metadata = json.loads((model_dir / "metadata.json").read_text(encoding="utf-8"))
    return model, tokenizer, metadata


@torch.no_grad()
def score_prompt(model: TinyCausalLM, tokenizer: WordTokenizer, prompt: str) -> tuple[float, float]:
    """(yes_logit, no_logit) at the next-token position after the prompt."""
    ids = tokenizer.encode(prompt, model.config["max_len"])
    batch = torch.tensor([ids], dtype=torch.long)
    lengths = torch.tensor([len(ids)], dtype=torch.long)
    logits = model.next_token_logits(batch, lengths, tokenizer.pad_id)[0]
    return float(logits[tokenizer.yes_id]), float(logits[tokenizer.no_id])
