"""Write the procedural asset set used by the tests and demo scripts."""
import argparse

from layerforge.assets import make_procedural_assets


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", help="destination directory")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    make_procedural_assets(args.out, seed=args.seed)
    print(args.out)


if __name__ == "__main__":
    main()
