import logging

from charts import occlusion_figure, save_figure
from commands.common import (
    EXIT_OK,
    common_parent,
    emit_table,
    load_inputs,
    parse_float_list,
    resolve_config,
)
from occlusion import occlusion_eval

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("occlude", parents=[common_parent()],
                                   help="Accuracy and F(3) under growing part occlusion")
    parser.add_argument("--data", required=True)
    parser.add_argument("--book", required=True)
    parser.add_argument("--head", required=True)
    parser.add_argument("--fractions", type=parse_float_list, default=None, help="e.g. 0.1,0.2,0.3")
    parser.add_argument("--force", action="store_true")
    parser.add_argument("--chart", default=None, help="Occlusion curve chart (.svg or .html)")
    parser.set_defaults(run=run)
    return parser


def run(args) -> int:
    cfg = resolve_config(args)
    if args.fractions is not None:
        cfg.occlusion.fractions = args.fractions
    ds, book, head = load_inputs(args)
    curve = occlusion_eval(ds, head, book, cfg.occlusion)
    emit_table(curve, args.output)
    if args.chart:
        save_figure(occlusion_figure(curve), args.chart)
    return EXIT_OK
