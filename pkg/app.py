import argparse
import logging
import sys
from typing import List, Optional

from components.commands import dispatch
from components.verify import CHECKS
from utils.cache_manager import package_version
from utils.config import BUILTIN_CONFIGS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glpin",
        description="Numerical lab for vortex filaments, Meissner states and the first critical field "
                    "of the pinned 3D Ginzburg-Landau model",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {package_version()}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str, curve: bool = False, epsilon: bool = False) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", default="ball-rho1",
                         help=f"TOML run configuration or a built-in name ({', '.join(BUILTIN_CONFIGS)})")
        sub.add_argument("--out", default=None, help="run directory (default: output.directory of the config)")
        sub.add_argument("--plot", action="store_true", help="write HTML charts next to the outputs")
        if curve:
            sub.add_argument("--curve", default=None, help="curve CSV; overrides curve.source")
        if epsilon:
            sub.add_argument("--epsilon", type=float, default=None, help="single coherence length")
        return sub

    command("pinning", "solve the pinning weight rho", epsilon=True)
    profile = command("profile", "solve the radial vortex profile and extract gamma")
    profile.add_argument("--rmax", type=float, default=None)
    profile.add_argument("--n", type=int, default=None)
    bs = command("bs", "corrected Biot-Savart fields j, A and the renormalized constant", curve=True, epsilon=True)
    bs.add_argument("--domain", dest="config", help="alias of --config")
    command("meissner", "Meissner solution B0 per unit applied field", epsilon=True)
    command("construct", "assemble the vortex test configuration (u, A)", curve=True, epsilon=True)
    energy = command("energy", "free energy, vorticity and splitting identity", curve=True, epsilon=True)
    energy.add_argument("--cfg", default=None, help="manifest.json of an earlier run")
    energy.add_argument("--sweep", action="store_true", help="run the epsilon sweep instead")
    command("isoflux", "maximize the isoflux ratio over curves", epsilon=True)
    command("hc1", "first critical field for every resolved epsilon")
    command("onset", "energy balance of the vortex against the Meissner state", curve=True, epsilon=True)
    sweep = command("sweep", "energy law of a fixed curve across epsilon", curve=True)
    sweep.add_argument("--epsilons", default=None, help="comma separated epsilon list")
    command("run", "every stage at the finest epsilon, with manifest", curve=True, epsilon=True)
    verify = commands.add_parser("verify", help="desk-resolution property checks")
    verify.add_argument("--module", default="all", choices=["all", *CHECKS])
    verify.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose >= 2 else logging.INFO if args.verbose == 1 else logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
