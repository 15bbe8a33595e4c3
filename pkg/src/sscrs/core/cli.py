import argparse
import logging
import sys
import traceback
from typing import List, Optional

from .command import AbstractCommand, COMMANDS, GradcheckCommand
from .errors import EXIT_SUCCESS, EXIT_USAGE, SSCError, exit_code_for
from .io import File, Directory

PROG = "sscrs"


def parse_grid(s: str) -> List[int]:
    """
    Parses 'L,W,H'.

    :param s: the string to parse
    :type s: str
    :return: the three dims
    :rtype: list
    """
    try:
        result = [int(x) for x in s.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("Expected L,W,H, got: %s" % s)
    if len(result) != 3 or min(result) < 1:
        raise argparse.ArgumentTypeError("Expected three positive dims L,W,H, got: %s" % s)
    return result


def create_parser() -> argparse.ArgumentParser:
    """
    Configures the parser with one sub-command per workflow.

    :return: the parser
    :rtype: argparse.ArgumentParser
    """
    parser = argparse.ArgumentParser(prog=PROG, description="Semantic scene completion from LiDAR point clouds.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("synth", help="writes synthetic scenes plus manifest")
    p.add_argument("--out", metavar="DIR", required=True, help="the dataset directory to write")
    p.add_argument("--count", metavar="N", type=int, default=1, help="the number of scenes")
    p.add_argument("--seed", metavar="S", type=int, default=1, help="the seed of the first scene")
    p.add_argument("--grid", metavar="L,W,H", type=parse_grid, default=[64, 64, 8], help="the voxels per axis")
    p.add_argument("--voxel-size", metavar="F", type=float, default=0.2, help="the voxel edge length in meters")
    p.add_argument("--config", metavar="FILE", default="", help="run configuration with the synth settings")

    p = sub.add_parser("train", help="trains a model")
    p.add_argument("--config", metavar="FILE", default="", help="the run configuration")
    p.add_argument("--data", metavar="DIR", default="", help="the training scenes")
    p.add_argument("--out", metavar="DIR", required=True, help="where to write log, checkpoints and run.conf")
    p.add_argument("--resume", metavar="CKPT", default="", help="the checkpoint to resume from")

    p = sub.add_parser("eval", help="evaluates a checkpoint")
    p.add_argument("--ckpt", metavar="FILE", required=True, help="the checkpoint")
    p.add_argument("--data", metavar="DIR", default="", help="the evaluation scenes")
    p.add_argument("--out", metavar="FILE", required=True, help="the metrics report to write")

    p = sub.add_parser("infer", help="predicts the scene of a point cloud")
    p.add_argument("--ckpt", metavar="FILE", required=True, help="the checkpoint")
    p.add_argument("--points", metavar="FILE", required=True, help="the point cloud")
    p.add_argument("--out", metavar="FILE", required=True, help="the label file to write")
    p.add_argument("--export-csv", metavar="FILE", default="", help="CSV file with the occupied voxels")

    p = sub.add_parser("gradcheck", help="runs the finite-difference gradient suite")
    p.add_argument("--scale", default="tiny", help="the problem size")

    return parser


def configure(ns: argparse.Namespace) -> AbstractCommand:
    """
    Instantiates and configures the command for the parsed arguments.

    :param ns: the parsed arguments
    :type ns: argparse.Namespace
    :return: the command
    :rtype: AbstractCommand
    """
    cmd = COMMANDS[ns.command]()
    if ns.command == "synth":
        cmd.set("output_dir", Directory(ns.out))
        cmd.set("count", ns.count)
        cmd.set("seed", ns.seed)
        cmd.set("grid", ns.grid)
        cmd.set("voxel_size", ns.voxel_size)
        cmd.set("config", File(ns.config))
    elif ns.command == "train":
        cmd.set("config", File(ns.config))
        cmd.set("data_dir", Directory(ns.data))
        cmd.set("output_dir", Directory(ns.out))
        cmd.set("resume", File(ns.resume))
    elif ns.command == "eval":
        cmd.set("checkpoint", File(ns.ckpt))
        cmd.set("data_dir", Directory(ns.data))
        cmd.set("output", File(ns.out))
    elif ns.command == "infer":
        cmd.set("checkpoint", File(ns.ckpt))
        cmd.set("points", File(ns.points))
        cmd.set("output", File(ns.out))
        cmd.set("export_csv", File(ns.export_csv))
    elif ns.command == "gradcheck":
        cmd.set("scale", ns.scale)
    return cmd


def run(cmd: AbstractCommand) -> int:
    """
    Sets up, executes and wraps up the command, printing any error message.

    :param cmd: the command to run
    :type cmd: AbstractCommand
    :return: the exit code
    :rtype: int
    """
    msg = cmd.setup()
    if msg is None:
        msg = cmd.execute()
    if isinstance(cmd, GradcheckCommand):
        for result in cmd.results:
            print(str(result))
    cmd.wrap_up()
    if msg is not None:
        print(msg, file=sys.stderr)
    return cmd.exit_code


def main(args: Optional[List[str]] = None) -> int:
    """
    Runs the command-line interface.

    :param args: the command-line arguments, uses sys.argv if None
    :type args: list
    :return: the exit code
    :rtype: int
    """
    parser = create_parser()
    try:
        ns = parser.parse_args(args=args)
    except SystemExit as e:
        return EXIT_SUCCESS if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO)
    try:
        cmd = configure(ns)
    except SSCError as e:
        print(str(e), file=sys.stderr)
        return e.exit_code
    return run(cmd)


def sys_main() -> int:
    """
    Runs the main function using the system cli arguments, and
    returns a system error code.

    :return: 0 for success, otherwise the error code of the failed command
    :rtype: int
    """
    try:
        return main()
    except Exception as e:
        print(traceback.format_exc())
        return exit_code_for(e)


if __name__ == '__main__':
    sys.exit(sys_main())
