"""Standalone entry point: ``plots <plotspec.json>``."""

from __future__ import annotations

import sys

from .render import PlotError, PlotSpec, render


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1 or argv[0] in ("-h", "--help"):
        print("usage: plots <plotspec.json>", file=sys.stderr)
        return 2
    try:
        results = render(PlotSpec.load(argv[0]))
    except (PlotError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for entry in results:
        slope = entry["slope"]
        note = f" slope={slope:.6f}" if slope is not None else ""
        print(f"wrote {entry['image']} ({entry['points']} points){note}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
