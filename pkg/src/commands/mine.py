import logging

from commands.common import EXIT_OK, common_parent, require_output, resolve_config
from dataset import load_dataset
from mining import merge_centroids, mine_concepts, save_book
from partproto import fit_prototype_centers, save_centers

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("mine", parents=[common_parent()], help="Mine a concept book from a dataset")
    parser.add_argument("--data", required=True)
    parser.add_argument("--centers", default=None, help="Also fit prototype centers and write them here (.json or .pcmc)")
    parser.set_defaults(run=run)
    return parser


def run(args) -> int:
    output = require_output(args, "concept book (.json or .pcmb)")
    cfg = resolve_config(args)
    ds = load_dataset(args.data)
    if args.centers:
        save_centers(fit_prototype_centers(ds, cfg.mcm), args.centers, cfg.hash())
    book = mine_concepts(ds, cfg.mining)
    if cfg.merge_enabled:
        book = merge_centroids(book, cfg.merge)
    book.config_hash = cfg.hash()
    save_book(book, output)
    logger.info("concept book with d_c=%d written to %s", book.d_c, output)
    return EXIT_OK
