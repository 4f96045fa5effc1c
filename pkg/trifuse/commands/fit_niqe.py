"""
Fit-NIQE Command
Builds the pristine model consumed by eval --niqe-model
"""
from trifuse.commands.common import add_parser, run_config
from trifuse.core.exceptions import EmptyDatasetError
from trifuse.services.imaging import list_images, load_image
from trifuse.services.iqa import fit_niqe_model, save_niqe_model


def register(subparsers) -> None:
    parser = add_parser(subparsers, "fit-niqe", "Fit a NIQE pristine model from well-exposed images")
    parser.add_argument("--input", required=True, help="Directory of pristine images (at least 10)")
    parser.add_argument("--out", required=True, help="Model file to write")
    parser.add_argument("--patch", type=int, default=None, help="Patch size in pixels (config niqe_patch when omitted)")
    parser.add_argument("--config", default=None, help="Run configuration file")
    parser.set_defaults(handler=run)


def run(args) -> int:
    config = run_config(args.config, niqe_patch=args.patch)
    paths = list_images(args.input)
    if not paths:
        raise EmptyDatasetError(f"no PNG/PPM images in {args.input}")
    model = fit_niqe_model([load_image(p) for p in paths], patch=config.niqe_patch)
    save_niqe_model(model, args.out)
    print(f"{args.out}\t{model.mean.size} features\tpatch {model.patch_size}")
    return 0
