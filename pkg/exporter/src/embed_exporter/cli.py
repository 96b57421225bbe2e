import argparse
import sys

from .backbone import BackboneError
from .export import ExportJob, export, list_images


def build_parser():
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Tile images into 512x512 patches, embed them with a frozen "
        "CNN backbone, and write one MILF file per slide.",
    )
    parser.add_argument("--images", required=True, help="directory of slide images")
    parser.add_argument("--out", required=True, help="output directory for .milf files")
    parser.add_argument("--backbone", default="resnet50")
    parser.add_argument(
        "--weights", default="pretrained",
        help='"pretrained", "random" (seeded offline fallback), or a local .pth path',
    )
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None):
    args = build_parser().parse_args(sys.argv[1:] if argv is None else argv)
    try:
        images = list_images(args.images)
    except OSError as e:
        print("error: %s" % e, file=sys.stderr)
        return 1
    job = ExportJob(
        images=tuple(images),
        out_dir=args.out,
        backbone=args.backbone,
        weights=args.weights,
        device=args.device,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    try:
        result = export(job)
    except BackboneError as e:
        print("error: %s" % e, file=sys.stderr)
        return 1
    for slide_id, path, n in result.written:
        print("%s: %d patches -> %s" % (slide_id, n, path))
    for path, message in result.failed:
        print("error: %s: %s" % (path, message), file=sys.stderr)
    return 1 if result.failed else 0


if __name__ == "__main__":
    sys.exit(main())
