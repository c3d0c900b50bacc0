"""Command-line front end.

    robolin linearize  --config CFG [--out DIR]
    robolin bound      --config CFG [--out DIR] [--seed N] [--samples N]
    robolin synth      --config CFG [--out DIR] [--tau-min A --tau-max B]
    robolin verify     --config CFG [--controller FILE] [--out DIR]
    robolin simulate   --config CFG [--controller FILE] [--tf T] [--dt H] [--seed N]
    robolin demo-ahfv  [--config CFG] [--out DIR] [--tf T] [--dt H]

``--config`` takes a file path or the name of a bundled config
(``scalar``, ``double_integrator``, ``double_integrator_nominal``, ``ahfv``).
Exit status is 0 on success, 2 when no feasible tau exists and 1 on any
other error. Artifacts are JSON with ``schema_version`` and the fingerprints
of their inputs; wall-clock data goes only to ``run_meta.json``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__
from . import pipeline as P
from .minimax import Controller, NoFeasibleTauError
from .sim import FingerprintMismatchError, export_csv

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


class CliError(RuntimeError):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if v != v:
            return "nan"
        if v in (float("inf"), float("-inf")):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path: str, obj) -> None:
    """Atomic write (temp file + rename) with sorted keys."""
    text = json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _artifact(kind: str, inputs: dict, data: dict) -> dict:
    return {"schema_version": P.SCHEMA_VERSION, "kind": kind, "inputs": inputs, **data}


class Run:
    """Shared state of one command invocation."""

    def __init__(self, args):
        self.args = args
        self.out = args.out
        self.quiet = args.quiet
        self.started = time.time()
        self.stages: dict[str, float] = {}
        self.written: list[str] = []
        self.cfg = self._config(args.config)
        if args.tau_min is not None or args.tau_max is not None:
            lo, hi = self.cfg.get("synthesis", {}).get("tau_bracket", [1e-3, 1e3])
            self.cfg.setdefault("synthesis", {})["tau_bracket"] = [
                args.tau_min if args.tau_min is not None else lo,
                args.tau_max if args.tau_max is not None else hi,
            ]
        if args.seed is not None:
            self.cfg["bound"].setdefault("sampling", {})["seed"] = args.seed
            if "scenario" in self.cfg:
                self.cfg["scenario"]["noise_seed"] = args.seed
        if args.samples is not None:
            self.cfg["bound"].setdefault("sampling", {})["random"] = args.samples
        self.config_fp = P.fingerprint(self.cfg)
        self._lin = self._bound = self._model = self._design = None

    @staticmethod
    def _config(spec: str) -> dict:
        if os.path.exists(spec):
            return P.load_config(spec)
        if spec in P.builtin_names():
            return P.builtin_config(spec)
        raise P.ConfigError(f"config not found: {spec}")

    def log(self, msg: str) -> None:
        if not self.quiet:
            print(msg)

    def stage(self, name, fn):
        t0 = time.time()
        out = fn()
        self.stages[name] = round(time.time() - t0, 3)
        return out

    def save(self, name: str, obj) -> str:
        path = os.path.join(self.out, name)
        write_json(path, obj)
        self.written.append(name)
        return path

    @property
    def inputs(self) -> dict:
        return {"config": self.config_fp, "config_name": self.cfg["name"]}

    def lin(self):
        if self._lin is None:
            self._lin = self.stage("linearize", lambda: P.linearize(self.cfg))
        return self._lin

    def bound(self):
        if self._bound is None:
            self._bound = self.stage("bound", lambda: P.compute_bound(self.cfg, self.lin()))
        return self._bound

    def model(self):
        if self._model is None:
            self._model = P.assemble(self.cfg, self.lin(), self.bound())
        return self._model

    def design(self):
        if self._design is None:
            self._design = self.stage("synthesize", lambda: P.synthesize(self.cfg, self.model()))
        return self._design

    def finish(self, command: str) -> None:
        self.save(
            "run_meta.json",
            {
                "command": command,
                "argv": sys.argv[1:],
                "version": __version__,
                "started_unix": self.started,
                "elapsed_s": round(time.time() - self.started, 3),
                "stage_seconds": self.stages,
                "artifacts": sorted(set(self.written)),
            },
        )


# ---------------------------------------------------------------------------
# commands


def cmd_linearize(run: Run) -> int:
    lin = run.lin()
    run.save("linearization.json", _artifact("linearization", run.inputs, lin.to_dict()))
    run.log(f"relative degree {list(lin.profile.r)}, {lin.brunovsky.A.shape[0]} transformed states")
    return EXIT_OK


def cmd_bound(run: Run) -> int:
    b = run.bound()
    run.save("bound.json", _artifact("bound", run.inputs, {"bound": b.to_dict()}))
    run.log(f"rho = {b.rho:.6g} from {b.samples} samples")
    return EXIT_OK


def _save_design(run: Run) -> P.Design:
    d = run.design()
    ctrl = d.controller
    run.save(
        "controller.json",
        _artifact(
            "controller",
            {**run.inputs, "model": d.model.fingerprint()},
            {"controller": ctrl.to_dict(), "controller_fingerprint": ctrl.fingerprint(), "model": d.model.to_dict()},
        ),
    )
    return d


def cmd_synth(run: Run) -> int:
    d = _save_design(run)
    c = d.certificate
    run.log(f"tau* = {c.tau:.6g}, W = {c.W_tau:.6g}")
    return EXIT_OK


def load_controller(path: str) -> Controller:
    """Read a controller artifact, checking its embedded fingerprint."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        ctrl = Controller.from_dict(doc["controller"])
    except (OSError, ValueError, KeyError, TypeError) as err:
        raise CliError(f"cannot read controller {path}: {err}") from err
    if ctrl.fingerprint() != doc.get("controller_fingerprint"):
        raise FingerprintMismatchError(f"controller fingerprint mismatch in {path}: file was modified")
    return ctrl


def _controller(run: Run):
    if run.args.controller:
        ctrl = load_controller(run.args.controller)
        if ctrl.model_fingerprint != run.model().fingerprint():
            raise FingerprintMismatchError(
                "controller fingerprint mismatch: it was synthesized for a different design model"
            )
        return ctrl, run.model(), ctrl.weights, ctrl.certificate
    d = _save_design(run)
    return d.controller, d.model, d.weights, d.certificate


def cmd_verify(run: Run) -> int:
    ctrl, model, _, _ = _controller(run)
    rep = run.stage("verify", lambda: P.verify(run.cfg, model, ctrl))
    run.save(
        "verification.json",
        _artifact("verification", {**run.inputs, "controller": ctrl.fingerprint()}, {"report": rep.to_dict()}),
    )
    run.log(
        f"stable={rep.stable} |T|cert={rep.hinf_certified:.6g} |T|psi={rep.hinf_psi:.6g} "
        f"perturbed abscissa={rep.perturbed_abscissa:.4g} passed={rep.passed}"
    )
    if not rep.passed:
        raise CliError("verification failed")
    return EXIT_OK


def _simulate(run: Run, csv_name: str) -> dict:
    ctrl, model, weights, cert = _controller(run)
    lin = run.lin()
    args = run.args
    scen = P.build_scenario(run.cfg, lin, tf=args.tf, dt=args.dt, seed=args.seed)
    design = P.Design(model, weights, cert, ctrl)
    ts, summary = run.stage("simulate", lambda: P.simulate(run.cfg, lin, design, scen))
    os.makedirs(run.out, exist_ok=True)
    export_csv(ts, os.path.join(run.out, csv_name))
    run.written.append(csv_name)
    doc = _artifact(
        "summary",
        {**run.inputs, "controller": ctrl.fingerprint(), "scenario": P.fingerprint(scen.to_dict())},
        {"summary": summary.to_dict(), "scenario": scen.to_dict(), "csv": csv_name},
    )
    run.save("summary.json", doc)
    run.log(
        f"{summary.steps} steps, relative error {np.round(summary.relative_error, 6).tolist()}, "
        f"J = {summary.empirical_J:.6g} (W = {summary.W_tau:.6g}), IQC margin {summary.iqc.margin:.4g}"
    )
    return doc


def cmd_simulate(run: Run) -> int:
    doc = _simulate(run, "timeseries.csv")
    return EXIT_ERROR if doc["summary"]["aborted"] else EXIT_OK


def cmd_demo_ahfv(run: Run) -> int:
    lin = run.lin()
    run.save("linearization.json", _artifact("linearization", run.inputs, lin.to_dict()))
    b = run.bound()
    run.save("bound.json", _artifact("bound", run.inputs, {"bound": b.to_dict()}))
    run.log(f"rho = {b.rho:.6g}")
    d = _save_design(run)
    run.log(f"tau* = {d.certificate.tau:.6g}, W = {d.certificate.W_tau:.6g}")
    rep = run.stage("verify", lambda: P.verify(run.cfg, d.model, d.controller))
    run.save(
        "verification.json",
        _artifact("verification", {**run.inputs, "controller": d.controller.fingerprint()}, {"report": rep.to_dict()}),
    )
    doc = _simulate(run, "ahfv_demo.csv")
    s = doc["summary"]
    ok = rep.passed and not s["aborted"] and s["tracking_ok"] and s["cost_ok"] and s["iqc"]["holds"]
    run.log("demo checks " + ("passed" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_ERROR


COMMANDS = {
    "linearize": cmd_linearize,
    "bound": cmd_bound,
    "synth": cmd_synth,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "demo-ahfv": cmd_demo_ahfv,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file or bundled config name")
    common.add_argument("--out", default="robolin-out", help="artifact directory")
    common.add_argument("--seed", type=int, help="override sampling and noise seeds")
    common.add_argument("--samples", type=int, help="random samples for the rho bound")
    common.add_argument("--tau-min", type=float, dest="tau_min")
    common.add_argument("--tau-max", type=float, dest="tau_max")
    common.add_argument("--tf", type=float, help="simulation horizon")
    common.add_argument("--dt", type=float, help="simulation step")
    common.add_argument("--controller", help="controller artifact to use instead of synthesizing")
    common.add_argument("--quiet", action="store_true")
    parser = argparse.ArgumentParser(prog="robolin", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"robolin {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.config is None:
        if args.command != "demo-ahfv":
            print(f"robolin {args.command}: --config is required", file=sys.stderr)
            return EXIT_ERROR
        args.config = "ahfv"
    try:
        run = Run(args)
        code = COMMANDS[args.command](run)
        run.finish(args.command)
        return code
    except NoFeasibleTauError as err:
        print(f"infeasible: {err}", file=sys.stderr)
        for tau, reason in err.grid[:: max(1, len(err.grid) // 8)]:
            print(f"  tau={tau:.4g}: {reason}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except P.ConfigError as err:
        print(f"config error at {err}", file=sys.stderr)
        return EXIT_ERROR
    except FingerprintMismatchError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as err:  # noqa: BLE001 - reported with context, exit status 1
        print(f"error ({args.command}): {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
