"""Wall time and peak memory of windowed against global attention."""

from __future__ import annotations

import json
import logging
import pathlib
import time
import tracemalloc
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass

import numpy as np

from Costformer.errors import DomainError
from Costformer.tensor_core import LinearParams, Tensor
from Costformer.tensor_core.nn import component_rng
from Costformer.transformer import AttentionParams, WindowSpec, token_count
from Costformer.transformer.windows import window_partition, window_reverse

logger = logging.getLogger(__name__)

DEFAULT_SIZES = (32, 64, 96, 128)
DEFAULT_WINDOW = (7, 7, 2)
GLOBAL_CHUNK = 256


def _softmax(scores: np.ndarray) -> np.ndarray:
    """Softmax over the last axis."""
    shifted = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def split_heads(x: np.ndarray, p: LinearParams, heads: int) -> np.ndarray:
    """Project ``x[N, T, E]`` and split it into ``[N, heads, T, E / heads]``."""
    out = x @ p.weight.data
    if p.bias is not None:
        out = out + p.bias.data
    n, t, dim = out.shape
    return out.reshape(n, t, heads, dim // heads).transpose(0, 2, 1, 3)


def attention_kernel(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    params: AttentionParams,
    bias: np.ndarray | None = None,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Attend split-head queries over keys and apply the output projection.

    Plain numpy with the weights of ``params``; nothing is recorded for
    gradients.
    """
    scores = q @ k.transpose(0, 1, 3, 2) * (1.0 / np.sqrt(params.head_dim))
    if bias is not None:
        scores = scores + bias[None]
    if mask is not None:
        scores = scores + mask[:, None].astype(scores.dtype)
    mixed = _softmax(scores) @ v
    n, heads, t, width = mixed.shape
    merged = mixed.transpose(0, 2, 1, 3).reshape(n, t, heads * width)
    out = merged @ params.output.weight.data
    if params.output.bias is not None:
        out = out + params.output.bias.data
    return out


def windowed_attention(
    volume: np.ndarray, params: AttentionParams, window: Sequence[int]
) -> np.ndarray:
    """Attention within the windows of ``volume[H, W, D, E]``."""
    part = window_partition(Tensor(volume), WindowSpec(tuple(window)))
    tokens = part.windows.data
    q, k, v = (
        split_heads(tokens, p, params.heads)
        for p in (params.query, params.key, params.value)
    )
    bias = params.bias(part.layout.window).data
    mixed = attention_kernel(q, k, v, params, bias, part.mask)
    return window_reverse(Tensor(mixed), part.layout).data


def global_attention(
    volume: np.ndarray, params: AttentionParams, chunk: int = GLOBAL_CHUNK
) -> np.ndarray:
    """Attention of every token over all tokens, ``chunk`` queries at a time."""
    tokens = volume.reshape(1, -1, volume.shape[-1])
    q = split_heads(tokens, params.query, params.heads)
    k = split_heads(tokens, params.key, params.heads)
    v = split_heads(tokens, params.value, params.heads)
    out = np.empty_like(tokens)
    for start in range(0, tokens.shape[1], chunk):
        stop = start + chunk
        out[:, start:stop] = attention_kernel(q[:, :, start:stop], k, v, params)
    return out.reshape(volume.shape)


def _measure(fn: Callable[[], object], repeats: int) -> tuple[float, int]:
    """Best wall time over ``repeats`` calls and the peak traced bytes."""
    fn()
    best = np.inf
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - started)
    tracemalloc.start()
    try:
        fn()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return float(best), int(peak)


def fit_exponent(sizes: Sequence[float], values: Sequence[float]) -> float:
    """Slope of ``log(values)`` against ``log(sizes)``."""
    if len(sizes) < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(sizes), np.log(values), 1)
    return float(slope)


@dataclass(frozen=True)
class BenchRow:
    """Measurements for one ``size x size x depth`` volume."""

    size: int
    tokens: int
    windows: int
    windowed_seconds: float
    global_seconds: float
    windowed_peak_bytes: int
    global_peak_bytes: int


@dataclass(frozen=True)
class BenchReport:
    """All rows plus the fitted growth exponents in the image side."""

    window: tuple[int, ...]
    depth: int
    dim: int
    heads: int
    rows: list[BenchRow]
    windowed_exponent: float
    global_exponent: float

    def table(self) -> str:
        """Semicolon-separated table with a header line."""
        header = ";".join(BenchRow.__dataclass_fields__)
        lines = [header]
        for row in self.rows:
            lines.append(
                ";".join(
                    f"{value:.6f}" if isinstance(value, float) else str(value)
                    for value in asdict(row).values()
                )
            )
        lines.append(
            f"# exponents;windowed={self.windowed_exponent:.3f};"
            f"global={self.global_exponent:.3f}"
        )
        return "\n".join(lines)

    def to_dict(self) -> dict[str, object]:
        """Plain values for JSON."""
        return asdict(self)


def bench_attention(
    sizes: Sequence[int] = DEFAULT_SIZES,
    window: Sequence[int] = DEFAULT_WINDOW,
    depth: int = 2,
    dim: int = 8,
    heads: int = 2,
    seed: int = 0,
    repeats: int = 3,
) -> BenchReport:
    """Time both attentions on ``size x size x depth`` token volumes."""
    if not sizes or min(sizes) < 1:
        raise DomainError(f"sizes must be positive, got {sizes}")
    window = tuple(int(w) for w in window)
    params = AttentionParams(
        component_rng(seed, "bench.attention"),
        dim,
        heads,
        window,
        dtype=np.float32,
    )
    rng = component_rng(seed, "bench.volume")
    rows = []
    for size in sizes:
        volume = rng.standard_normal((size, size, depth, dim))
        volume = volume.astype(np.float32)
        grid = volume.shape[:3]
        windowed_s, windowed_peak = _measure(
            lambda v=volume: windowed_attention(v, params, window), repeats
        )
        global_s, global_peak = _measure(
            lambda v=volume: global_attention(v, params), repeats
        )
        row = BenchRow(
            size=size,
            tokens=int(np.prod(grid)),
            windows=token_count(grid, window),
            windowed_seconds=windowed_s,
            global_seconds=global_s,
            windowed_peak_bytes=windowed_peak,
            global_peak_bytes=global_peak,
        )
        logger.info(
            "size %d: windowed %.4fs, global %.4fs", size, windowed_s, global_s
        )
        rows.append(row)
    ordered = [row.size for row in rows]
    return BenchReport(
        window=window,
        depth=depth,
        dim=dim,
        heads=heads,
        rows=rows,
        windowed_exponent=fit_exponent(
            ordered, [row.windowed_seconds for row in rows]
        ),
        global_exponent=fit_exponent(
            ordered, [row.global_seconds for row in rows]
        ),
    )


def write_report(report: BenchReport, path: str | pathlib.Path) -> None:
    """Write the report as JSON."""
    pathlib.Path(path).write_text(
        json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
