"""
Command-line front end. Exit codes: 0 success, 2 configuration error,
3 data error, 4 numerical failure.
"""
import argparse
import logging
import sys
from typing import Optional, Sequence

from . import __version__, pipeline
from .errors import ConfigError, DataError, NumericError
from .exp_utils import PRESETS, load_config

__all__ = ('build_parser', 'main', 'EXIT_CONFIG', 'EXIT_DATA', 'EXIT_NUMERIC')

logger = logging.getLogger("isac_detect")

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _common_flags() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('--config', default=None, type=str,
                        help='JSON configuration, missing keys take the preset defaults')
    parser.add_argument('--preset', default=None, choices=PRESETS,
                        help='default configuration (toy or full scale)')
    parser.add_argument('--seed', default=None, type=int, help='master seed')
    parser.add_argument('--out', default=None, type=str, help='output directory')
    parser.add_argument('--progressbar', action='store_true', help='show progress bars')
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    return parser


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="isac-detect", description="Delay-Doppler path detection on OFDM "
        "channel estimates")
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    p.add_argument('--count', default=None, type=int,
                   help='number of snapshots, n_test of the config by default')
    p.add_argument('--split', default="test", choices=pipeline.SPLITS)

    sub.add_parser("train", parents=[common], help="train the neural backend")

    for name, text in (("detect", "detect paths in the test split"),
                       ("eval", "score detections and export the max-hold map")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument('--backend', default="classical", choices=pipeline.BACKENDS)

    p = sub.add_parser("replica", parents=[common],
                       help="run the three-receiver measurement replica")
    p.add_argument('--no-ablation', dest="ablation", action='store_false',
                   help='skip the run without clutter filter')

    p = sub.add_parser("report", parents=[common],
                       help="collect every report CSV below a directory")
    p.add_argument('root', nargs='?', default=None,
                   help='directory to search, --out by default')
    return parser


def _config(args):
    cfg = load_config(args.config, args.preset)
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    return cfg.replace(**changes) if changes else cfg


def run(args) -> None:
    if args.command == "report":
        root = args.root or args.out or load_config(args.config, args.preset).out_dir
        print(pipeline.cmd_report(root).to_string(index=False))
        return

    cfg = _config(args)
    logger.info(f"config {cfg.config_hash()[:12]} (preset {cfg.preset}), "
                f"output in {cfg.out_dir}")
    if args.command == "generate":
        pipeline.cmd_generate(cfg, args.count, args.split, progressbar=args.progressbar)
    elif args.command == "train":
        pipeline.cmd_train(cfg, progressbar=args.progressbar)
    elif args.command == "detect":
        pipeline.cmd_detect(cfg, args.backend, progressbar=args.progressbar)
    elif args.command == "eval":
        print(pipeline.cmd_eval(cfg, args.backend).to_text())
    elif args.command == "replica":
        reports = pipeline.cmd_replica(cfg, ablation=args.ablation,
                                       progressbar=args.progressbar)
        for r in reports["tracks"]:
            print(r.to_text())
    else:
        raise ValueError(f"args.command={args.command}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except ConfigError as e:
        logger.error(f"configuration error: {e}")
        return EXIT_CONFIG
    except (DataError, OSError) as e:
        logger.error(f"data error: {e}")
        return EXIT_DATA
    except NumericError as e:
        logger.error(f"numerical failure: {e}")
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
