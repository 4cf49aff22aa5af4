"""Command line entry point: ``reflectpriv <stage> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline, scene, sessionio
from .pipeline import ConfigError, MissingArtifact, PipelineConfig


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file")
    common.add_argument("--out", metavar="DIR", default="out", help="artifact directory (default: out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--scene", choices=pipeline.SCENES + ("all",))
    common.add_argument("--object", choices=pipeline.OBJECTS + ("both",))
    common.add_argument("--defense", choices=pipeline.DEFENSES)
    common.add_argument("--detector-cmd", metavar="CMD", help="external detector command")
    common.add_argument("--dynamic", action="store_true", default=None,
                        help="treat the environment as dynamic (forces restricted rendering)")
    common.add_argument("--check", action="store_true", help="exit nonzero unless all thresholds hold")
    common.add_argument("--full-res", action="store_true", help="1280x960 rgb, 256x192 depth, 2048 faces")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="reflectpriv", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in list(pipeline.STAGES) + ["pipeline"]:
        sub.add_parser(name, parents=[common])
    return p


def config_from_args(args) -> PipelineConfig:
    cfg = pipeline.load_config(args.config) if args.config else PipelineConfig()
    if args.full_res:
        cfg = cfg.full_res()
    pairs = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    for key, attr in (("seed", "seed"), ("scene", "scene"), ("object", "object"), ("defense", "defense"),
                      ("detector_cmd", "detector_cmd")):
        v = getattr(args, attr)
        if v is not None:
            pairs[key] = str(v)
    if args.dynamic:
        pairs["dynamic"] = "true"
    return pipeline.config_from_pairs(pairs, cfg)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(message)s")
    out = Path(args.out)
    handler = None
    try:
        cfg = config_from_args(args)
        out.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(out / "pipeline.log")
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        logging.getLogger("reflectpriv").addHandler(handler)
        logging.getLogger("reflectpriv").setLevel(logging.DEBUG if args.verbose else logging.INFO)
        if args.command == "pipeline":
            ok, summary = pipeline.run_pipeline(cfg, out)
        else:
            result = pipeline.STAGES[args.command](cfg, out)
            ok, summary = result if args.command == "evaluate" else (True, [])
    except (ConfigError, MissingArtifact, sessionio.SessionError, scene.SceneError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    finally:
        if handler is not None:
            logging.getLogger("reflectpriv").removeHandler(handler)
            handler.close()
    for line in summary:
        print(line)
    if args.check and not ok:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
