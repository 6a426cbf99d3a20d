"""Command-line front end.

Exit codes: 0 success, 1 signature rejected, 2 usage, parameter, file-format
or period errors, 3 refused key update (backwards, or past the empty key),
4 restart limit reached, 5 protocol abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

from . import formats, params as params_mod, protocol, scheme
from .errors import FormatError, LastPeriod, ParamError, RestartLimitExceeded, TimeMismatch
from .gaussian import RandomSource
from .params import Params
from .timetree import key_update, minimal_cover, node_order

EXIT_OK, EXIT_REJECT, EXIT_USAGE, EXIT_BACKWARD, EXIT_RESTARTS, EXIT_ABORT = range(6)


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _rng(args) -> RandomSource:
    if args.seed is None:
        return RandomSource()
    try:
        seed = bytes.fromhex(args.seed)
    except ValueError:
        raise CliError("--seed must be hex") from None
    if len(seed) != 32:
        raise CliError("--seed must be 32 bytes (64 hex digits)")
    return RandomSource(seed)


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise CliError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = val.strip()
    return out


def _params_from_args(args) -> Params:
    """Profile plus --set overrides. Derived fields may be overridden too (validation then reports them)."""
    sets = _overrides(getattr(args, "set", None))
    name = args.profile or "toy-T0"
    if name not in params_mod.PRESETS:
        raise CliError(f"unknown profile {name!r}; choose from {sorted(params_mod.PRESETS)}")
    base = dict(params_mod.PRESETS[name])
    inputs = {"n", "ell", "q", "k", "kappa", "sigma", "m", "gamma"}
    for key in list(sets):
        if key in inputs:
            val = sets.pop(key)
            base[key] = float(val) if key == "sigma" else int(val)
    p = params_mod.derive(**base)
    if sets:
        fields = p.as_dict()
        unknown = set(sets) - set(fields)
        if unknown:
            raise CliError(f"unknown parameter(s): {sorted(unknown)}")
        p = p.replace(**{k: type(fields[k])(float(v)) if isinstance(fields[k], float) else int(v) for k, v in sets.items()})
    return p


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from exc


def _write(path, data: bytes):
    Path(path).write_bytes(data)


def _emit(args, payload: dict, text: str):
    print(json.dumps(payload, sort_keys=True) if args.json else text)


def _address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise CliError(f"address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


# ---------------------------------------------------------------------------


def cmd_keygen(args) -> int:
    p = _params_from_args(args)
    errors = [v for v in params_mod.validate(p) if v.level == "ERROR"]
    if errors:
        raise CliError("; ".join(str(v) for v in errors))
    params, pk, sk = scheme.setup(p, _rng(args))
    _write(args.pk, formats.encode_public_key(pk))
    _write(args.sk, formats.encode_secret_key(sk))
    gs = sk.nodes[""].prepared().gs_norm
    info = {"gs_norm": gs, "sigma": params.sigma, "sigma1": params.sigma1, "sigma2": params.sigma2,
            "sigma3": params.sigma3, "m": params.m, "tau": params.tau}
    _emit(args, info, "\n".join([f"trapdoor |T~| = {gs:.4f}", f"sigma  = {params.sigma:g}",
                                 f"sigma1 = {params.sigma1:.6g}", f"sigma2 = {params.sigma2:.6g}",
                                 f"sigma3 = {params.sigma3:.6g}", f"m = {params.m}, periods = {params.tau}"]))
    return EXIT_OK


def _load_pk(path):
    try:
        return formats.decode_public_key(_read(path))
    except FormatError as exc:
        raise CliError(f"{path}: {exc}") from exc


def _load_sk(path, pk):
    try:
        sk = formats.decode_secret_key(_read(path), pk.params)
    except FormatError as exc:
        raise CliError(f"{path}: {exc}") from exc
    return sk


def cmd_update(args) -> int:
    pk = _load_pk(args.pk)
    sk = _load_sk(args.sk, pk)
    target = sk.t + 1 if args.to is None else args.to
    if target < sk.t:
        raise CliError(f"refusing to move the key backwards from {sk.t} to {target}", EXIT_BACKWARD)
    if target > pk.params.tau:
        raise CliError(f"period {target} is past the empty key at {pk.params.tau}", EXIT_BACKWARD)
    try:
        while sk.t < target:
            sk = key_update(pk, sk)
            if not sk.check(pk):
                raise CliError(f"evolved key for period {sk.t} failed its invariants", EXIT_USAGE)
    except LastPeriod as exc:
        raise CliError(str(exc), EXIT_BACKWARD) from exc
    _write(args.sk, formats.encode_secret_key(sk))
    nodes = [w or "ε" for w in sorted(sk.nodes, key=node_order)]
    label = "empty (past the last period)" if sk.is_empty else "{" + ", ".join(nodes) + "}"
    _emit(args, {"t": sk.t, "nodes": nodes, "empty": sk.is_empty}, f"t = {sk.t}, nodes = {label}")
    return EXIT_OK


def cmd_sign(args) -> int:
    pk = _load_pk(args.pk)
    rng = _rng(args)
    if args.serve:
        if not args.sk:
            raise CliError("--serve needs --sk")
        sk = _load_sk(args.sk, pk)
        if sk.t != args.t:
            raise CliError(f"secret key is for period {sk.t}, not {args.t}")
        host, port = _address(args.serve)
        listener = protocol.listen(host, port)
        addr = listener.getsockname()
        print(f"listening on {addr[0]}:{addr[1]}", flush=True)
        service = protocol.SignerService(pk, sk)
        try:
            outcomes = protocol.run_signer(listener, service, args.sessions, rng, mirror_seed=args.sessions == 1)
        finally:
            listener.close()
        report = [{"ok": o.view is not None, "restarts": o.restarts, "abort": o.abort, "adversary": o.adversary}
                  for o in outcomes]
        _emit(args, {"sessions": report}, "\n".join(
            f"session {i}: {'view recorded' if r['ok'] else 'aborted: ' + str(r['abort'])}, restarts = {r['restarts']}"
            for i, r in enumerate(report)))
        if any(o.restart_limit for o in outcomes):
            return EXIT_RESTARTS
        return EXIT_OK if all(o.view is not None for o in outcomes) else EXIT_ABORT
    if not args.message or not args.out:
        raise CliError("signing needs --message and --out")
    mu = _read(args.message)
    try:
        if args.connect:
            ch = protocol.connect(_address(args.connect))
            try:
                out = protocol.run_user(ch, pk, args.t, mu, rng.fork(b"user"))
            finally:
                ch.close()
            sig, restarts = out.signature, out.restarts
        else:
            if not args.sk:
                raise CliError("local signing needs --sk")
            sk = _load_sk(args.sk, pk)
            res = scheme.sign_local(pk, sk, args.t, mu, rng)
            sig, restarts = res.signature, res.restarts
    except TimeMismatch as exc:
        raise CliError(str(exc)) from exc
    except LastPeriod as exc:
        raise CliError(str(exc)) from exc
    except RestartLimitExceeded as exc:
        raise CliError(str(exc), EXIT_RESTARTS) from exc
    except protocol.PeerAborted as exc:
        code = EXIT_RESTARTS if exc.code == protocol.AbortCode.RESTART_LIMIT else EXIT_ABORT
        if exc.code == protocol.AbortCode.TIME_MISMATCH:
            code = EXIT_USAGE
        raise CliError(str(exc), code) from exc
    except (OSError, scheme.ProtocolViolation, protocol.DecodeError) as exc:
        raise CliError(f"protocol failure: {exc}", EXIT_ABORT) from exc
    _write(args.out, formats.encode_signature(args.t, sig))
    _emit(args, {"restarts": restarts, "t": args.t}, f"signature written to {args.out}; restarts = {restarts}")
    return EXIT_OK


def cmd_verify(args) -> int:
    pk = _load_pk(args.pk)
    mu = _read(args.message)
    try:
        t_file, sig = formats.decode_signature(_read(args.sig), pk.params)
    except FormatError as exc:
        raise CliError(f"{args.sig}: {exc}") from exc
    t = t_file if args.t is None else args.t
    ok = t == t_file and scheme.verify(pk, t, mu, sig)
    _emit(args, {"valid": ok, "t": t}, "valid" if ok else "INVALID")
    return EXIT_OK if ok else EXIT_REJECT


def cmd_params(args) -> int:
    try:
        p = _params_from_args(args)
    except ParamError as exc:
        _emit(args, {"error": str(exc)}, f"parameter error: {exc}")
        return EXIT_USAGE
    report = params_mod.validate(p)
    errors = [v for v in report if v.level == "ERROR"]
    if args.json:
        print(json.dumps({"params": p.as_dict(), "violations": [
            {"constraint": v.constraint, "lhs": v.lhs, "rhs": v.rhs, "level": v.level} for v in report]},
            sort_keys=True))
    else:
        for key, val in p.as_dict().items():
            print(f"{key:>7} = {val:.6g}" if isinstance(val, float) else f"{key:>7} = {val}")
        print("validation:" if report else "validation: all constraints hold")
        for v in report:
            print(f"  {v}")
    return EXIT_USAGE if errors else EXIT_OK


def cmd_vectors(args) -> int:
    """Deterministic conformance vectors: keys, the full key walk, signatures, and transcripts."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = _rng(args) if args.seed else RandomSource(bytes(32))
    p = _params_from_args(args)
    params, pk, sk = scheme.setup(p, rng.fork(b"keygen"))
    _write(out / "pk.bin", formats.encode_public_key(pk))
    manifest = {"params": params.to_text(), "periods": [], "seed": rng.seed.hex()}
    for t in range(params.tau):
        _write(out / f"sk_t{t}.bin", formats.encode_secret_key(sk))
        entry = {"t": t, "nodes": minimal_cover(t, params.ell), "signatures": []}
        for j in range(args.per_period):
            mu = f"message {j} for period {t}".encode()
            user, signer = protocol.sign_over_socketpair(pk, sk, t, mu, rng.fork(f"sign-{t}-{j}"))
            name = f"sig_t{t}_{j}"
            _write(out / f"{name}.bin", formats.encode_signature(t, user.signature))
            _write(out / f"{name}.msg", mu)
            frames = [{"dir": e.direction, "kind": e.message.kind.name, "payload": e.message.payload.hex()}
                      for e in user.transcript]
            (out / f"{name}.transcript.json").write_text(json.dumps(frames, indent=1))
            entry["signatures"].append({"file": f"{name}.bin", "message": f"{name}.msg", "restarts": user.restarts,
                                        "sha256": hashlib.sha256(formats.encode_signature(t, user.signature)).hexdigest()})
        manifest["periods"].append(entry)
        sk = key_update(pk, sk)
    _write(out / f"sk_t{params.tau}.bin", formats.encode_secret_key(sk))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    with_restart = sum(s["restarts"] > 0 for e in manifest["periods"] for s in e["signatures"])
    _emit(args, {"dir": str(out), "signatures": params.tau * args.per_period, "with_restarts": with_restart},
          f"wrote vectors to {out} ({with_restart} transcripts contain restarts)")
    return EXIT_OK


def cmd_inspect(args) -> int:
    data = _read(args.file)
    magic = data[:4]
    info: dict = {"magic": magic.decode(errors="replace"), "bytes": len(data)}
    try:
        if magic == formats.PK_MAGIC:
            pk = formats.decode_public_key(data)
            info.update(kind="public key", params=pk.params.as_dict())
        elif magic == formats.SK_MAGIC:
            sk = formats.decode_secret_key(data)
            info.update(kind="secret key", t=sk.t, ell=sk.ell, empty=sk.is_empty,
                        nodes=sorted(sk.nodes, key=node_order))
        elif magic == formats.SIG_MAGIC:
            if not args.pk:
                raise CliError("inspecting a signature needs --pk for its parameters")
            pk = _load_pk(args.pk)
            t, sig = formats.decode_signature(data, pk.params)
            norm = math.sqrt(scheme.zq.sq_norm(sig.z))
            info.update(kind="signature", t=t, z_norm=norm, z_bound=pk.params.z_bound,
                        challenge=[int(v) for v in sig.e])
        elif magic == b"FSTD":
            from .trapdoor import decode_trapdoor
            pair = decode_trapdoor(data)
            info.update(kind="trapdoor", q=pair.q, shape=list(pair.A.shape), gs_norm=pair.gs_norm)
        else:
            raise CliError(f"unrecognised file magic {magic!r}")
    except FormatError as exc:
        raise CliError(f"{args.file}: {exc}") from exc
    _emit(args, info, "\n".join(f"{k}: {v}" for k, v in info.items()))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def globals_parser(default):
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--seed", default=default, help="32-byte hex seed; makes the run deterministic")
        g.add_argument("--profile", default=default, help="parameter preset (default toy-T0)")
        g.add_argument("--json", action="store_true", default=False if default is None else default,
                       help="machine-readable output")
        return g

    # Global flags are accepted before or after the subcommand; the copy on
    # each subcommand suppresses its defaults so it never clobbers the first.
    common = globals_parser(argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="fsbs", description="Forward-secure blind signatures over lattices.",
                                     parents=[globals_parser(None)])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", parents=[common], help="generate a key pair")
    p.add_argument("--pk", required=True)
    p.add_argument("--sk", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("update", parents=[common], help="evolve a secret key")
    p.add_argument("--sk", required=True)
    p.add_argument("--pk", required=True)
    p.add_argument("--to", type=int)
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("sign", parents=[common], help="sign locally, or serve / connect over TCP")
    p.add_argument("--pk", required=True)
    p.add_argument("--sk")
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--message")
    p.add_argument("--out")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--serve", metavar="HOST:PORT")
    mode.add_argument("--connect", metavar="HOST:PORT")
    p.add_argument("--sessions", type=int, default=1)
    p.set_defaults(func=cmd_sign)

    p = sub.add_parser("verify", parents=[common], help="verify a signature")
    p.add_argument("--pk", required=True)
    p.add_argument("--t", type=int)
    p.add_argument("--message", required=True)
    p.add_argument("--sig", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("params", parents=[common], help="show derived parameters and validation")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("vectors", parents=[common], help="emit deterministic test vectors")
    p.add_argument("--out", required=True)
    p.add_argument("--per-period", type=int, default=2)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_vectors)

    p = sub.add_parser("inspect", parents=[common], help="describe a key, signature or trapdoor file")
    p.add_argument("file")
    p.add_argument("--pk")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ParamError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
