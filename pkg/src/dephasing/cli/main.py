"""``dephasing`` command line.

One subcommand per experiment kind, plus ``presets`` and ``show-config``.
Exit status: 0 success, 2 flagged (finished with warnings), 1 failed or
invalid input.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import KINDS, PRESETS, ConfigError, ExperimentConfig, apply_overrides, load_config, preset
from .runner import run


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", choices=PRESETS, help="named experiment preset")
    p.add_argument("--seed", type=int, help="ensemble seed (unsigned 64-bit)")
    p.add_argument("--out", help="output directory (default runs/<name>)")
    p.add_argument("--workers", type=int, help="worker threads; results do not depend on it")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="set a config key, dotted for nesting, e.g. map.k=5 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dephasing", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for kind in KINDS:
        _common(sub.add_parser(kind, help=f"run a {kind} experiment"))
    sub.add_parser("presets", help="list presets")
    show = sub.add_parser("show-config", help="print the resolved config as JSON")
    show.add_argument("kind", choices=KINDS)
    _common(show)
    return parser


def resolve_config(kind: str, args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("--config", "give either --config or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        cfg = ExperimentConfig(kind)
    if cfg.kind != kind:
        raise ConfigError("kind", f"config describes a {cfg.kind!r} experiment, not {kind!r}")
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"ensemble.seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    cfg = apply_overrides(cfg, overrides)
    out = args.out if args.out is not None else f"runs/{cfg.name}"
    return cfg.replace(out=out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        for name in PRESETS:
            print(f"{name}\t{preset(name).kind}")
        return 0
    kind = args.kind if args.command == "show-config" else args.command
    try:
        cfg = resolve_config(kind, args)
    except (ConfigError, OSError) as exc:
        print(f"dephasing: error: {exc}", file=sys.stderr)
        return 1
    if args.command == "show-config":
        print(cfg.to_json())
        return 0

    manifest = run(cfg)
    for rec in manifest.records:
        print(f"{rec.name}\t{rec.value:.6g}\t{rec.note}")
    for msg in manifest.messages:
        print(f"note: {msg}", file=sys.stderr)
    print(f"{manifest.status}: {manifest.out_dir} ({manifest.wall_time:.2f}s)")
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
