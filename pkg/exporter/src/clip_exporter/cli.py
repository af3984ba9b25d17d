"""clip-export command-line interface.

    clip-export --model <id> --images <npy> --labels <file> \
                --strategy {single,multi,complex} --out <dir>

Images: a .npy array, N x D_in, values in [0, 1]. Labels: a text file whose
first line is the comma-separated class names, followed by one integer label
per line. Synonyms (complex strategy): ``class = alt1, alt2`` lines via
--synonyms; templates may be overridden with --templates (one per line).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .encoder import DEFAULT_MODEL, load_model
from .errors import ExporterError, IOFailure
from .export import export_bundle
from .prompts import STRATEGIES, PromptSet, default_prompt_set, load_templates


def read_labels_file(path):
    """Returns (class_names, labels array)."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise IOFailure(f"cannot read labels file {path}: {e}") from e
    if not lines or not lines[0].strip():
        raise IOFailure(f"{path}: first line must list class names")
    class_names = [c.strip() for c in lines[0].split(",")]
    try:
        labels = np.array([int(ln) for ln in lines[1:] if ln.strip()],
                          dtype=np.int64)
    except ValueError as e:
        raise IOFailure(f"{path}: bad label line: {e}") from e
    return class_names, labels


def read_synonyms_file(path) -> dict[str, list[str]]:
    """``class = alt1, alt2`` per line; blank lines and # comments ignored."""
    out: dict[str, list[str]] = {}
    for lineno, line in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise IOFailure(f"{path}:{lineno}: expected 'class = alt1, alt2'")
        name, _, alts = stripped.partition("=")
        out[name.strip()] = [a.strip() for a in alts.split(",") if a.strip()]
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="clip-export",
        description="Export prompt-ensemble zero-shot logits and features "
                    "as an RKDC cache bundle.")
    p.add_argument("--model", default=DEFAULT_MODEL,
                   help="model id, or 'stub:<seed>:<dim>' for the offline "
                        "deterministic encoder")
    p.add_argument("--images", required=True,
                   help=".npy file, N x D_in, values in [0, 1]")
    p.add_argument("--labels", required=True,
                   help="first line: comma-separated class names; then one "
                        "integer label per line")
    p.add_argument("--strategy", choices=STRATEGIES, default="multi")
    p.add_argument("--templates", default=None,
                   help="optional template file, one per line")
    p.add_argument("--synonyms", default=None,
                   help="optional synonyms file (complex strategy)")
    p.add_argument("--out", required=True, help="output bundle directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        class_names, labels = read_labels_file(args.labels)
        try:
            images = np.load(args.images)
        except (OSError, ValueError) as e:
            raise IOFailure(f"cannot read images {args.images}: {e}") from e
        synonyms = (read_synonyms_file(args.synonyms)
                    if args.synonyms else None)
        if args.templates:
            ps = PromptSet(args.strategy, load_templates(args.templates),
                           dict(synonyms or {}))
        else:
            ps = default_prompt_set(args.strategy, synonyms)
        ps.validate()
        model = load_model(args.model)
        out, tensors = export_bundle(model, images, labels, class_names,
                                     ps, args.out)
    except ExporterError as e:
        print(f"clip-export: error: {e}", file=sys.stderr)
        return 1
    n, k = tensors["teacher_logits"].shape
    print(f"wrote bundle to {out}: N={n} K={k} M={ps.prompt_count} "
          f"strategy={ps.strategy} model={model.model_id}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
