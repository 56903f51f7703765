import logging
from pathlib import Path

from commands.common import EXIT_OK, UsageError, common_parent, require_output
from dataset import SyntheticSpec, generate_synthetic, save_dataset
from utils import ValidationError, save_json

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("gen", parents=[common_parent()], help="Generate a planted synthetic dataset")
    parser.add_argument("--classes", type=int, default=5)
    parser.add_argument("--parts", type=int, default=4)
    parser.add_argument("--dim", type=int, default=32)
    parser.add_argument("--per-class", type=int, default=40)
    parser.add_argument("--concepts", type=int, default=2, help="Planted concepts per (class, part)")
    parser.add_argument("--noise", type=float, default=0.02)
    parser.add_argument("--g-noise", type=float, default=None, help="Noise of the non-prototypical vector")
    parser.add_argument("--min-separation", type=float, default=1.0)
    parser.add_argument("--format", choices=["pfd", "csv"], default="pfd")
    parser.add_argument("--truth", default=None, help="Ground-truth JSON path (default: <output>.truth.json)")
    parser.set_defaults(run=run)
    return parser


def run(args) -> int:
    output = require_output(args, "dataset file")
    spec = SyntheticSpec(
        n_classes=args.classes,
        n_parts=args.parts,
        feat_dim=args.dim,
        samples_per_class=args.per_class,
        concepts_per_cell=args.concepts,
        noise_sigma=args.noise,
        min_separation=args.min_separation,
        seed=args.seed if args.seed is not None else 0,
        g_noise_sigma=args.g_noise,
    )
    try:
        spec.validate()
    except ValidationError as e:
        raise UsageError(str(e)) from e
    ds, truth = generate_synthetic(spec)
    save_dataset(ds, output, "csv" if args.format == "csv" else "binary-pfd")
    truth_path = Path(args.truth) if args.truth else output.with_name(output.name + ".truth.json")
    save_json(truth.to_dict(), truth_path)
    logger.info("wrote %d samples to %s and ground truth to %s", ds.n_samples, output, truth_path)
    return EXIT_OK
