"""Command line client.

Requests go to the service handlers in-process, or to a running server when
``--url`` is given. ``gfscma serve`` starts that server.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .harness import dump_trial, emit_csv, trial_seed, write_trace, TrialResult
from .model import PAPER_GAMMAS, ConfigError, parse_config_text

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_REMOTE = 4

# Keys a config file may carry besides the system parameters.
_RUN_KEYS = {
    "snr_db": str, "trials": int, "seed": int, "tau": float, "tmax": int, "tau_stop": float,
    "damp": float, "strict_paper_variances": str, "parallelism": int, "starts": int,
    "init": str, "out": str, "trace": str,
}


def parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_snr(items: Sequence[str]) -> list[Optional[float]]:
    """Each item is a value, ``none`` (noiseless) or an inclusive range ``a:b:step``."""
    out: list[Optional[float]] = []
    for item in items:
        for part in str(item).split(","):
            part = part.strip()
            if not part:
                continue
            if part.lower() in ("none", "inf", "noiseless"):
                out.append(None)
            elif ":" in part:
                try:
                    a, b, step = (float(v) for v in part.split(":"))
                except ValueError:
                    raise ConfigError(f"bad SNR range {part!r}, expected a:b:step") from None
                if step <= 0 or b < a:
                    raise ConfigError(f"bad SNR range {part!r}")
                n = int(np.floor((b - a) / step + 1e-9)) + 1
                out.extend(float(round(a + i * step, 10)) for i in range(n))
            else:
                try:
                    out.append(float(part))
                except ValueError:
                    raise ConfigError(f"bad SNR value {part!r}") from None
    if not out:
        raise ConfigError("empty SNR grid")
    return out


def read_config_file(path: str) -> tuple[dict, dict]:
    """Split a ``key = value`` file into (system keys, run keys)."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise IOError(f"cannot read config {path}: {e}") from None
    system_lines, run = [], {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        key = line.split("=", 1)[0].strip() if "=" in line else None
        if key in _RUN_KEYS:
            value = line.split("=", 1)[1].strip()
            try:
                run[key] = _RUN_KEYS[key](value)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
        else:
            system_lines.append(raw)
    return parse_config_text("\n".join(system_lines)), run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gfscma", description="Grant-free SCMA BiG-AMP simulator")
    p.add_argument("--version", action="version", version=f"gfscma {__version__}")
    p.add_argument("--url", help="send requests to a running gfscma server")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags override it")
    common.add_argument("--gamma", type=float, action="append", help="sparsity d_f/K, repeatable")
    common.add_argument("--snr-db", action="append", help="value, 'none' or a:b:step; repeatable")
    common.add_argument("--df", type=int, help="nonzeros per codeword")
    common.add_argument("--dv", type=int, help="users per subcarrier")
    common.add_argument("--symbols", "-I", dest="symbols", type=int, help="codewords per frame (I)")
    common.add_argument("--seed", type=int)
    common.add_argument("--tau", type=float, help="detection threshold, default amplitude/2")
    common.add_argument("--tmax", type=int)
    common.add_argument("--tau-stop", type=float)
    common.add_argument("--damp", type=float)
    common.add_argument("--strict-paper-variances", nargs="?", const="true", metavar="BOOL")
    common.add_argument("--support-mode", choices=("per_symbol", "per_frame"))
    common.add_argument("--starts", type=int, help="BiG-AMP starts per trial")
    common.add_argument("--init", choices=("clustered", "prior"))
    common.add_argument("--out", help="CSV path")
    common.add_argument("--trace", help="per-iteration trace CSV path")

    sw = sub.add_parser("sweep", parents=[common], help="Monte-Carlo sweep over gamma and SNR")
    sw.add_argument("--trials", type=int)
    sw.add_argument("--parallelism", type=int)

    tr = sub.add_parser("trial", parents=[common], help="one trial with optional debug dumps")
    tr.add_argument("--dump-frames", help="write the transmitted frames, one CSV line per user")
    tr.add_argument("--dump-trial", help="write assignment, phases and per-user BER as JSON")

    va = sub.add_parser("validate", parents=[common], help="check a configuration")

    sv = sub.add_parser("serve", help="run the HTTP service")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8000)
    for s in (sw, tr, va):
        s.set_defaults(_has_common=True)
    return p


def _settings(args) -> dict:
    """Merge defaults, config file and flags."""
    system, run = read_config_file(args.config) if args.config else ({}, {})
    s = {
        "trials": 50, "seed": 0, "parallelism": 1, "snr_db": ["17.5"],
        "tmax": None, "tau_stop": None, "damp": None, "tau": None,
        "strict_paper_variances": None, "starts": None, "init": None, "out": None, "trace": None,
    }
    if "snr_db" in run:
        run["snr_db"] = [run["snr_db"]]
    s.update(run)
    for key in ("trials", "seed", "parallelism", "tmax", "tau_stop", "damp", "tau",
                "strict_paper_variances", "starts", "init", "out", "trace", "snr_db"):
        v = getattr(args, key, None)
        if v is not None:
            s[key] = v
    if s["strict_paper_variances"] is not None:
        s["strict_paper_variances"] = parse_bool(s["strict_paper_variances"])
    s["snr_db"] = parse_snr(s["snr_db"])

    for flag, key in (("df", "d_f"), ("dv", "d_v"), ("symbols", "I"), ("support_mode", "support_mode")):
        v = getattr(args, flag, None)
        if v is not None:
            system[key] = v
    gammas = args.gamma
    if gammas is None and "gamma" in system:
        gammas = [system["gamma"]]
    system.pop("gamma", None)
    if gammas is None and not ("K" in system and "N" in system):
        gammas = list(PAPER_GAMMAS) if args.command == "sweep" else [0.25]
    if gammas is not None:
        system.pop("K", None)
        system.pop("N", None)
        system.pop("J", None)
    s["system"] = system
    s["gammas"] = gammas
    return s


def _requests(s: dict):
    from .service.schemas import (
        BigAmpOptionsModel, ConfigModel, DetectorOptionsModel,
    )

    system = {k: v for k, v in s["system"].items() if k not in ("sigma2", "beta_bar")}
    if "beta" in system:
        system["beta"] = list(system["beta"])
    config = ConfigModel(**system)
    bo = {}
    for key, field in (("tmax", "t_max"), ("tau_stop", "tau_stop"), ("damp", "damp"),
                       ("strict_paper_variances", "strict_paper_variances"),
                       ("starts", "max_starts"), ("init", "init")):
        if s[key] is not None:
            bo[field] = s[key]
    return config, BigAmpOptionsModel(**bo), DetectorOptionsModel(tau=s["tau"])


class _Remote:
    def __init__(self, url: str):
        import httpx

        self.client = httpx.Client(base_url=url, timeout=None)

    def post(self, path: str, body, response_cls):
        r = self.client.post(path, content=body.model_dump_json(), headers={"content-type": "application/json"})
        if r.status_code == 422:
            raise ConfigError(r.json().get("detail"))
        r.raise_for_status()
        return response_cls.model_validate(r.json())


def _trial(s: dict, args, remote) -> int:
    from .service.app import handle_trial, to_sweep_result
    from .service.schemas import TrialRequest, TrialResponse

    if s["gammas"] is not None and len(s["gammas"]) != 1:
        raise ConfigError("trial takes a single --gamma")
    if len(s["snr_db"]) != 1:
        raise ConfigError("trial takes a single --snr-db")
    config, bo, do = _requests(s)
    if s["gammas"] is not None:
        config = config.model_copy(update={"gamma": s["gammas"][0]})
    req = TrialRequest(
        config=config, snr_db=s["snr_db"][0], seed=s["seed"], bigamp=bo, detector=do,
        trace=bool(s["trace"]), frames=bool(args.dump_frames),
    )
    resp = remote.post("/trial", req, TrialResponse) if remote else handle_trial(req)
    print(json.dumps(resp.result.model_dump(exclude={"per_user_ber", "assignment", "phases"})))
    if s["out"]:
        emit_csv(to_sweep_result(resp), s["out"])
    if s["trace"]:
        write_trace(resp.trace, s["trace"])
    if args.dump_frames:
        with open(args.dump_frames, "w") as f:
            for row in resp.frames:
                f.write(",".join(repr(v) for v in row) + "\n")
    if args.dump_trial:
        dump_trial(TrialResult(**resp.result.model_dump()), args.dump_trial)
    return EXIT_OK


def _sweep(s: dict, args, remote) -> int:
    from .service.app import handle_sweep, handle_trial, to_sweep_result
    from .service.schemas import SweepRequest, SweepResponse, TrialRequest, TrialResponse

    config, bo, do = _requests(s)
    req = SweepRequest(
        config=config, gammas=s["gammas"], snr_db=s["snr_db"], trials=s["trials"],
        parallelism=s["parallelism"], seed=s["seed"], bigamp=bo, detector=do,
    )
    resp = remote.post("/sweep", req, SweepResponse) if remote else handle_sweep(req)
    result = to_sweep_result(resp)
    if s["out"]:
        emit_csv(result, s["out"])
    else:
        from .harness import CSV_HEADER

        print(",".join(CSV_HEADER))
        for p in result.points:
            print(",".join(p.row()))
    if s["trace"]:
        # Replays the first trial of the first grid point with tracing on.
        g0 = None if s["gammas"] is None else s["gammas"][0]
        treq = TrialRequest(
            config=config.model_copy(update={"gamma": g0}) if g0 is not None else config,
            snr_db=s["snr_db"][0], seed=trial_seed(s["seed"], 0, 0, 0), bigamp=bo, detector=do, trace=True,
        )
        tresp = remote.post("/trial", treq, TrialResponse) if remote else handle_trial(treq)
        write_trace(tresp.trace, s["trace"])
    return EXIT_OK


def _validate(s: dict, args, remote) -> int:
    from .service.app import handle_validate
    from .service.schemas import ValidateResponse

    config, _, _ = _requests(s)
    configs = [config] if s["gammas"] is None else [config.model_copy(update={"gamma": g}) for g in s["gammas"]]
    ok = True
    for c in configs:
        r = remote.post("/config/validate", c, ValidateResponse) if remote else handle_validate(c)
        print(json.dumps(r.model_dump()))
        ok &= r.valid
    return EXIT_OK if ok else EXIT_CONFIG


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "serve":
        import uvicorn

        uvicorn.run("gfscma.service.app:app", host=args.host, port=args.port)
        return EXIT_OK
    remote = None
    try:
        s = _settings(args)
        if args.url:
            remote = _Remote(args.url)
        handler = {"trial": _trial, "sweep": _sweep, "validate": _validate}[args.command]
        return handler(s, args, remote)
    except ConfigError as e:
        print(f"gfscma: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, TypeError) as e:
        print(f"gfscma: invalid input: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"gfscma: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except Exception as e:  # httpx errors and the like
        if args.url and type(e).__module__.startswith("httpx"):
            print(f"gfscma: remote error: {e}", file=sys.stderr)
            return EXIT_REMOTE
        raise


if __name__ == "__main__":
    sys.exit(main())
