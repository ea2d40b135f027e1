"""Command-line client for the training service.

Subcommands mirror the service endpoints: ``synth``, ``train``, ``ablate``,
``sweep``, ``eval``, plus ``serve`` to run the HTTP server. By default the
CLI talks to an in-process application instance (no server needed, artifacts
land on the local filesystem); ``--server URL`` points it at a running
server instead. Configuration comes from an optional YAML file merged with
flag overrides; every training-config field is addressable as a flag.

Exit codes: 0 success; otherwise a per-category code with one JSON error
line on stderr: {"error": {"category": ..., "message": ...}}.
"""

import argparse
import dataclasses
import json
import sys
import time

import httpx
import yaml

from .data import AugmentationConfig, SyntheticConfig
from .errors import EngineError
from .harness import TrainConfig

EXIT_CODES = {
    "config": 2,
    "domain": 3,
    "format": 4,
    "state": 5,
    "lookup": 6,
    "http": 7,
    "internal": 1,
}

_SKIP_FLAG_FIELDS = {"synthetic", "files", "augmentation", "seeds"}


class CliError(Exception):
    def __init__(self, category, message):
        super().__init__(message)
        self.category = category


def _add_dataclass_flags(parser, cls, prefix=""):
    """One ``--flag`` per scalar dataclass field (bools get --x/--no-x)."""
    for f in dataclasses.fields(cls):
        if not prefix and f.name in _SKIP_FLAG_FIELDS:
            continue
        flag = f"--{prefix}{f.name.replace('_', '-')}"
        if f.type in ("bool", bool):
            parser.add_argument(flag, dest=f"{prefix.replace('-', '_')}{f.name}",
                                action=argparse.BooleanOptionalAction, default=None)
        elif f.name == "confusable_pairs":
            parser.add_argument(flag, dest=f"{prefix.replace('-', '_')}{f.name}",
                                default=None, metavar="A:B:RHO[,A:B:RHO...]",
                                help="confusable class pairs")
        else:
            caster = float if f.type in ("float", float) else (
                int if f.type in ("int", int) else str)
            parser.add_argument(flag, dest=f"{prefix.replace('-', '_')}{f.name}",
                                type=caster, default=None)


def _parse_pairs(text):
    pairs = []
    for chunk in text.split(","):
        a, b, rho = chunk.split(":")
        pairs.append((int(a), int(b), float(rho)))
    return pairs


def _collect_overrides(args, cls, prefix=""):
    out = {}
    for f in dataclasses.fields(cls):
        if not prefix and f.name in _SKIP_FLAG_FIELDS:
            continue
        value = getattr(args, f"{prefix.replace('-', '_')}{f.name}", None)
        if value is None:
            continue
        if f.name == "confusable_pairs":
            value = _parse_pairs(value)
        out[f.name] = value
    return out


def _load_config_file(path):
    if not path:
        return {}
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise CliError("lookup", f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise CliError("config", f"invalid YAML in {path}: {exc}")
    if not isinstance(raw, dict):
        raise CliError("config", f"config file {path} must hold a mapping")
    return raw


def _deep_merge(base, override):
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def build_train_payload(args):
    """YAML config + flag overrides -> request config dict (sparse)."""
    raw = _load_config_file(getattr(args, "config", None))
    overrides = _collect_overrides(args, TrainConfig)
    synth_over = _collect_overrides(args, SyntheticConfig, prefix="synth-")
    aug_over = _collect_overrides(args, AugmentationConfig, prefix="aug-")
    merged = _deep_merge(raw, overrides)
    if synth_over:
        merged = _deep_merge(merged, {"synthetic": synth_over})
    if aug_over:
        merged = _deep_merge(merged, {"augmentation": aug_over})
    if getattr(args, "seeds", None):
        merged["seeds"] = [int(s) for s in args.seeds.split(",")]
    files = {name: getattr(args, f"files_{name}", None)
             for name in ("labeled", "unlabeled", "test", "anchors")}
    if any(files.values()):
        if not all(files.values()):
            raise CliError("config", "all four --files-* paths are required together")
        merged["files"] = files
    # validate locally for fast feedback; the service validates again
    TrainConfig.from_dict(merged).validate()
    return merged


class ServiceClient:
    """Minimal HTTP client; in-process ASGI by default, remote via base URL."""

    def __init__(self, server=None):
        if server:
            self._client = httpx.Client(base_url=server.rstrip("/"), timeout=60.0)
        else:
            import warnings
            with warnings.catch_warnings():
                # starlette warns about its own httpx-backed TestClient import
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

                from .service import create_app
                self._client = TestClient(create_app())

    def request(self, method, path, payload=None):
        try:
            resp = self._client.request(method, path, json=payload)
        except httpx.HTTPError as exc:
            raise CliError("http", f"cannot reach service: {exc}")
        if resp.status_code >= 400:
            try:
                detail = resp.json()
            except ValueError:
                detail = {}
            err = detail.get("error") or {}
            if not err and "detail" in detail:
                err = {"category": "config", "message": json.dumps(detail["detail"])}
            raise CliError(err.get("category", "internal"),
                           err.get("message", f"HTTP {resp.status_code}"))
        return resp.json()

    def wait_for_job(self, job_id, poll_interval=0.2, quiet=False):
        last_progress = None
        while True:
            status = self.request("GET", f"/jobs/{job_id}")
            if status["state"] == "done":
                return status["result"]
            if status["state"] == "failed":
                err = status.get("error") or {}
                raise CliError(err.get("category", "internal"),
                               err.get("message", "job failed"))
            progress = status.get("progress")
            if progress and progress != last_progress and not quiet:
                print(f"progress: {progress['current']}/{progress['total']}",
                      file=sys.stderr)
                last_progress = progress
            time.sleep(poll_interval)


def cmd_synth(client, args):
    config = {}
    raw = _load_config_file(args.config)
    config.update(raw.get("synthetic", raw) if raw else {})
    config.update(_collect_overrides(args, SyntheticConfig, prefix="synth-"))
    payload = {"config": config, "out_dir": args.out,
               "include_hidden_labels": not args.strip_hidden_labels}
    return client.request("POST", "/synth", payload)


def cmd_train(client, args):
    payload = {"config": build_train_payload(args), "out_dir": args.out}
    job = client.request("POST", "/train", payload)
    return client.wait_for_job(job["job_id"], quiet=args.quiet)


def cmd_ablate(client, args):
    payload = {"config": build_train_payload(args), "out_dir": args.out}
    job = client.request("POST", "/ablate", payload)
    return client.wait_for_job(job["job_id"], quiet=args.quiet)


def cmd_sweep(client, args):
    grid = [float(g) for g in args.grid.split(",")]
    payload = {"config": build_train_payload(args), "parameter": args.parameter,
               "grid": grid, "out_dir": args.out}
    job = client.request("POST", "/sweep", payload)
    return client.wait_for_job(job["job_id"], quiet=args.quiet)


def cmd_eval(client, args):
    return client.request("POST", "/eval", {"checkpoint": args.checkpoint,
                                            "test_file": args.test_file})


def build_parser():
    parser = argparse.ArgumentParser(
        prog="trilabel",
        description="Client for the multi-level pseudo-label training service")
    parser.add_argument("--server", default=None,
                        help="service URL (default: run in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset as SITF files")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--config", default=None, help="YAML config file")
    p_synth.add_argument("--strip-hidden-labels", action="store_true",
                         help="write -1 labels for unlabeled records")
    _add_dataclass_flags(p_synth, SyntheticConfig, prefix="synth-")

    def add_train_flags(p, with_out=True):
        if with_out:
            p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--config", default=None, help="YAML config file")
        p.add_argument("--seeds", default=None, metavar="S0,S1,...",
                       help="seeds for multi-run commands")
        p.add_argument("--quiet", action="store_true", help="suppress progress lines")
        for name in ("labeled", "unlabeled", "test", "anchors"):
            p.add_argument(f"--files-{name}", dest=f"files_{name}", default=None,
                           help=f"{name} SITF file (train from files)")
        _add_dataclass_flags(p, TrainConfig)
        _add_dataclass_flags(p, SyntheticConfig, prefix="synth-")
        _add_dataclass_flags(p, AugmentationConfig, prefix="aug-")

    add_train_flags(sub.add_parser("train", help="run one training"))
    add_train_flags(sub.add_parser("ablate", help="run the component ablation matrix"))
    p_sweep = sub.add_parser("sweep", help="sweep a confidence threshold")
    p_sweep.add_argument("--parameter", required=True, choices=("alpha", "gamma"))
    p_sweep.add_argument("--grid", required=True, metavar="V0,V1,...")
    add_train_flags(p_sweep)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a test file")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--test-file", required=True)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import create_app
        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0
    try:
        client = ServiceClient(args.server)
        result = COMMANDS[args.command](client, args)
    except (CliError, EngineError) as exc:
        category = exc.category
        print(json.dumps({"error": {"category": category,
                                    "message": str(exc)}}), file=sys.stderr)
        return EXIT_CODES.get(category, 1)
    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
