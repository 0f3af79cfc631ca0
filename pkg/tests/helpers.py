"""Shared builders for tests that drive the command line."""

from pathlib import Path

SMALL_SECTIONS = {
    "data": {"n_clips": "16"},
    "model": {"hidden": "32"},
    "train": {"iterations": "60", "eval_every": "20", "eval_clips": "16", "lr": "0.002",
              "checkpoint_every": "40"},
    "sample": {"steps": "20", "n_samples": "8"},
    "eval": {"n_samples": "8"},
}


def small_config(**overrides) -> str:
    """TOML text for a tiny run; ``overrides`` maps section -> {key: toml literal}."""
    out = []
    for sec in sorted(set(SMALL_SECTIONS) | set(overrides)):
        entries = {**SMALL_SECTIONS.get(sec, {}), **overrides.get(sec, {})}
        out.append(f"[{sec}]\n" + "".join(f"{k} = {v}\n" for k, v in entries.items()))
    return "".join(out)


def quote(path) -> str:
    return f'"{Path(path).as_posix()}"'
