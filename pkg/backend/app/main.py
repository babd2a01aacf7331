from dotenv import load_dotenv
import argparse
import json
import logging
import sys
from typing import List, Optional

# Load environment variables FIRST before any other imports
load_dotenv()

from app.config.runtime import LOG_LEVEL

# Configure logging right after loading environment variables
logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
logger = logging.getLogger(__name__)

from app.config.settings import load_run_config
from app.core.errors import SpotterError


def _train(args) -> int:
    from app.services.training import cmd_train

    result = cmd_train(load_run_config(args.config))
    print(json.dumps({"checkpoint": str(result.checkpoint), "metrics": str(result.metrics_path),
                      "steps": len(result.history)}))
    return 0


def _infer(args) -> int:
    from app.services.inference import cmd_infer

    results = cmd_infer(args.ckpt, args.images, svg_out=args.svg_out, threshold=args.threshold, out=args.out)
    print(json.dumps({"images": len(results.results),
                      "instances": sum(len(r.instances) for r in results.results)}))
    return 0


def _eval(args) -> int:
    from app.services.inference import cmd_eval

    metrics = cmd_eval(args.ckpt, args.data, protocol=args.protocol, lexicon=args.lexicon,
                       threshold=args.threshold, out=args.out)
    print(json.dumps(metrics, indent=2))
    return 0


def _line_sensitivity(args) -> int:
    from app.services.sensitivity import cmd_line_sensitivity, parse_grid

    rows = cmd_line_sensitivity(load_run_config(args.config), parse_grid(args.shift), parse_grid(args.shrink),
                                out=args.out)
    print(json.dumps(rows, indent=2))
    return 0


def _generate(args) -> int:
    from app.services.dataset import export_annotations
    from app.services.glyphs import GlyphSet
    from app.services.scene_generator import generate_scenes

    config = load_run_config(args.config)
    count = args.count if args.count is not None else config.data.num_scenes
    seed = args.seed if args.seed is not None else config.data.seed
    scenes = generate_scenes(count, seed, config.data, GlyphSet(config.model.vocab_size), config.model.num_points)
    path = export_annotations(scenes, args.out)
    print(json.dumps({"annotations": str(path), "scenes": len(scenes)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spotter", description="Point-query text spotting")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model from a run config")
    train.add_argument("--config", required=True)
    train.set_defaults(handler=_train)

    infer = sub.add_parser("infer", help="spot text in images")
    infer.add_argument("--ckpt", required=True)
    infer.add_argument("--images", required=True, help="image file or directory")
    infer.add_argument("--svg-out", dest="svg_out", default=None)
    infer.add_argument("--threshold", type=float, default=None)
    infer.add_argument("--out", default=None, help="results JSON path")
    infer.set_defaults(handler=_infer)

    evaluate = sub.add_parser("eval", help="evaluate a checkpoint on an annotation file")
    evaluate.add_argument("--ckpt", required=True)
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--protocol", choices=("detection", "e2e", "line"), default="detection")
    evaluate.add_argument("--lexicon", default=None)
    evaluate.add_argument("--threshold", type=float, default=None)
    evaluate.add_argument("--out", default=None, help="metrics JSON path")
    evaluate.set_defaults(handler=_eval)

    sensitivity = sub.add_parser("line-sensitivity", help="line-label noise sweep")
    sensitivity.add_argument("--config", required=True)
    sensitivity.add_argument("--shift", required=True, help="comma-separated shift fractions")
    sensitivity.add_argument("--shrink", required=True, help="comma-separated shrink fractions")
    sensitivity.add_argument("--out", default=None, help="CSV path")
    sensitivity.set_defaults(handler=_line_sensitivity)

    generate = sub.add_parser("generate", help="write synthetic scenes as an annotation file")
    generate.add_argument("--config", required=True)
    generate.add_argument("--out", required=True, help="annotation JSON path")
    generate.add_argument("--count", type=int, default=None)
    generate.add_argument("--seed", type=int, default=None)
    generate.set_defaults(handler=_generate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except SpotterError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
