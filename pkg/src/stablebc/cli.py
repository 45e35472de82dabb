"""Command-line interface: data generation, training, evaluation, analysis.

One JSON config document with sections env / expert / train / eval /
analyze carries every overridable constant; command-line flags override
config values. Every command echoes the fully resolved configuration it
ran with into its output location, and that echo feeds straight back in
through --config (its provenance keys — command, paths, fingerprint —
are ignored on input), so a run can be reproduced bit-identically from
its artifacts. Timing is printed to stdout only — output files contain
nothing run-dependent.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import functools
import json
import os
import sys
import time

from .datagen import encode_dataset, generate, load_dataset, save_dataset
from .envs import make_env
from .envs.pointmass import (
    autoencoder_from_dict,
    autoencoder_to_dict,
    encode,
    train_autoencoder,
)
from .errors import ConfigError, StableBCError, UnsupportedConfigError
from .evaluation import analyze_stability, evaluate, policy_callable
from .policy import load_policy, save_policy
from .trainer import TrainConfig, train

_SECTION_KEYS = {
    "expert": {"demos", "seed"},
    "train": {
        "method",
        "hidden",
        "activation",
        "epochs",
        "batch_size",
        "learning_rate",
        "lam",
        "lam1",
        "lam2",
        "warmup_fraction",
        "seed",
        "ae_hidden",
        "ae_epochs",
        "ae_learning_rate",
    },
    "eval": {"protocol", "episodes", "seed", "action_noise"},
    "analyze": {"eps", "horizon", "curve_points"},
}

# provenance keys that echoed configs carry alongside the sections; ignored
# on input so an echoed config can be passed straight back via --config
# (paths and the command stay under flag control)
_ECHO_KEYS = frozenset({"command", "data", "dataset_fingerprint", "out", "policy"})

_AE_DEFAULTS = {"ae_hidden": 64, "ae_epochs": 500, "ae_learning_rate": 1e-3}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage problems; the contract here
    # reserves 2 for runtime failures, so route usage through code 1
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def load_config(path: str | None) -> dict:
    config = {"env": {}, "expert": {}, "train": {}, "eval": {}, "analyze": {}}
    if path is None:
        return config
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = sorted(set(raw) - set(config) - _ECHO_KEYS)
    if unknown:
        raise ConfigError(
            f"{path}: unknown config sections: {', '.join(unknown)}"
        )
    for section, value in raw.items():
        if section in _ECHO_KEYS:
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: section {section!r} must be an object")
        allowed = _SECTION_KEYS.get(section)
        if allowed is not None:
            bad = sorted(set(value) - allowed)
            if bad:
                raise ConfigError(
                    f"{path}: unknown keys in section {section!r}: {', '.join(bad)}"
                )
        config[section] = dict(value)
    return config


def _build_env(name: str | None, config: dict):
    env_section = dict(config.get("env", {}))
    config_name = env_section.pop("name", None)
    name = name or config_name
    if name is None:
        raise ConfigError("no environment given (flag --env or config env.name)")
    return make_env(name, env_section)


def _write(path: str, content: str) -> None:
    with open(path, "w") as fh:
        fh.write(content)


def _echo_config(path: str, resolved: dict) -> None:
    _write(path, json.dumps(resolved, sort_keys=True, indent=1) + "\n")


def _ensure_outdir(path: str) -> None:
    os.makedirs(path, exist_ok=True)


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    config = load_config(args.config)
    env = _build_env(args.env, config)
    expert = config["expert"]
    demos = args.demos if args.demos is not None else expert.get("demos")
    seed = args.seed if args.seed is not None else expert.get("seed", 0)
    if demos is None:
        raise ConfigError("no demo count given (flag --demos or config expert.demos)")
    started = time.perf_counter()
    ds = generate(env, int(demos), int(seed))
    save_dataset(ds, args.out)
    resolved = {
        "command": "gen-data",
        "env": {"name": env.name, **dataclasses.asdict(env.spec)},
        "expert": {"demos": int(demos), "seed": int(seed)},
        "out": args.out,
    }
    _echo_config(args.out + ".config.json", resolved)
    print(f"wrote {len(ds)} samples to {args.out}")
    print(f"fingerprint {ds.fingerprint()}")
    print(f"wall time {time.perf_counter() - started:.2f}s")
    return 0


def _train_config(args, config: dict) -> tuple:
    section = dict(config["train"])
    ae_opts = dict(_AE_DEFAULTS)
    for key in _AE_DEFAULTS:
        if key in section:
            ae_opts[key] = section.pop(key)
    if args.method is not None:
        section["method"] = args.method
    if args.epochs is not None:
        section["epochs"] = args.epochs
    if args.seed is not None:
        section["seed"] = args.seed
    if "hidden" in section:
        section["hidden"] = tuple(section["hidden"])
    try:
        return TrainConfig(**section), ae_opts
    except TypeError as exc:
        raise ConfigError(f"invalid train config: {exc}") from exc


def cmd_train(args) -> int:
    config = load_config(args.config)
    tconf, ae_opts = _train_config(args, config)
    ds = load_dataset(args.data)
    env = _build_env(ds.env_name, config)
    autoencoder = None
    train_ds = ds
    if env.name == "pointmass" and ds.d == env.d:
        autoencoder = train_autoencoder(
            ds.Y,
            latent_dim=env.spec.latent_dim,
            hidden=int(ae_opts["ae_hidden"]),
            epochs=int(ae_opts["ae_epochs"]),
            learning_rate=float(ae_opts["ae_learning_rate"]),
            seed=tconf.seed,
        )
        train_ds = encode_dataset(ds, autoencoder)
    model = env.system_model()
    checkpoint, report = train(tconf, train_ds, model)
    if autoencoder is not None:
        checkpoint.metadata["autoencoder"] = autoencoder_to_dict(autoencoder)
    _ensure_outdir(args.out)
    ck_path = os.path.join(args.out, "policy.json")
    save_policy(ck_path, checkpoint.policy, checkpoint.metadata)
    report.checkpoint_path = ck_path
    _write(os.path.join(args.out, "train_log.csv"), report.to_csv())
    resolved = {
        "command": "train",
        "data": args.data,
        "dataset_fingerprint": ds.fingerprint(),
        "env": {"name": env.name, **dataclasses.asdict(env.spec)},
        "train": {**tconf.to_dict(), **ae_opts},
        "out": args.out,
    }
    _echo_config(os.path.join(args.out, "resolved_config.json"), resolved)
    print(f"checkpoint {ck_path}")
    print(f"final bc loss {report.final_bc!r}")
    print(f"wall time {report.wall_time:.2f}s")
    return 0


def _load_checkpoint_env(policy_path: str, config: dict):
    ck = load_policy(policy_path)
    env_name = ck.metadata.get("env")
    if not env_name:
        raise ConfigError(
            f"{policy_path}: checkpoint does not record its environment"
        )
    env = _build_env(env_name, config)
    encoder = None
    if "autoencoder" in ck.metadata:
        ae = autoencoder_from_dict(ck.metadata["autoencoder"])
        if ae.enc_weights[0].shape[1] != env.d or ck.policy.d != ae.latent_dim:
            raise ConfigError(
                "checkpoint autoencoder does not bridge the environment "
                f"observation width {env.d} to the policy width {ck.policy.d}"
            )
        encoder = functools.partial(encode, ae)
    elif ck.policy.d != env.d:
        raise ConfigError(
            f"checkpoint observes {ck.policy.d} dims but {env.name} "
            f"provides {env.d}"
        )
    if ck.policy.m != env.m or ck.policy.n != env.n:
        raise ConfigError(
            f"checkpoint dims (m={ck.policy.m}, n={ck.policy.n}) do not match "
            f"{env.name} (m={env.m}, n={env.n})"
        )
    return ck, env, encoder


def cmd_eval(args) -> int:
    config = load_config(args.config)
    section = config["eval"]
    protocol = args.protocol or section.get("protocol", "matched")
    episodes = args.episodes if args.episodes is not None else section.get("episodes", 50)
    seed = args.seed if args.seed is not None else section.get("seed", 0)
    action_noise = float(section.get("action_noise", 0.1))
    ck, env, encoder = _load_checkpoint_env(args.policy, config)
    started = time.perf_counter()
    fn = policy_callable(ck.policy, encoder)
    name = os.path.splitext(os.path.basename(args.policy))[0]
    report = evaluate(
        env, fn, protocol, int(episodes), int(seed), name, action_noise
    )
    _ensure_outdir(args.out)
    _write(os.path.join(args.out, "metrics.csv"), report.to_csv())
    _write(os.path.join(args.out, "metrics.json"), report.to_json())
    resolved = {
        "command": "eval",
        "policy": args.policy,
        "env": {"name": env.name, **dataclasses.asdict(env.spec)},
        "eval": {
            "protocol": protocol,
            "episodes": int(episodes),
            "seed": int(seed),
            "action_noise": action_noise,
        },
        "out": args.out,
    }
    _echo_config(os.path.join(args.out, "resolved_config.json"), resolved)
    for key in sorted(report.aggregates):
        print(f"{key} {report.aggregates[key]!r}")
    print(f"wall time {time.perf_counter() - started:.2f}s")
    return 0


def cmd_analyze(args) -> int:
    config = load_config(args.config)
    section = config["analyze"]
    eps = args.eps if args.eps is not None else section.get("eps", 0.1)
    horizon = args.horizon if args.horizon is not None else section.get("horizon", 1.0)
    curve_points = int(section.get("curve_points", 20))
    ck, env, _ = _load_checkpoint_env(args.policy, config)
    ds = load_dataset(args.data)
    if ds.env_name != env.name:
        raise ConfigError(
            f"dataset is for {ds.env_name!r} but checkpoint is for {env.name!r}"
        )
    started = time.perf_counter()
    if "autoencoder" in ck.metadata and ds.d == env.d:
        ds = encode_dataset(ds, autoencoder_from_dict(ck.metadata["autoencoder"]))
    model = env.system_model()
    if ds.d != model.d:
        raise ConfigError(
            f"dataset observation width {ds.d} does not match model width {model.d}"
        )
    report = analyze_stability(
        ck.policy, ds, model, eps=float(eps), horizon_t=float(horizon),
        curve_points=curve_points,
    )
    _ensure_outdir(args.out)
    _write(os.path.join(args.out, "spectra.csv"), report.to_csv())
    _write(os.path.join(args.out, "bound_curve.csv"), report.bound_curve_csv())
    _write(os.path.join(args.out, "analysis.json"), report.to_json())
    resolved = {
        "command": "analyze",
        "policy": args.policy,
        "data": args.data,
        "env": {"name": env.name, **dataclasses.asdict(env.spec)},
        "analyze": {
            "eps": float(eps),
            "horizon": float(horizon),
            "curve_points": curve_points,
        },
        "out": args.out,
    }
    _echo_config(os.path.join(args.out, "resolved_config.json"), resolved)
    print(f"route {report.route}")
    print(f"stable_fraction {report.aggregates['stable_fraction']!r}")
    print(f"wall time {time.perf_counter() - started:.2f}s")
    return 0


# -- entry point ----------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="stablebc", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate an expert demonstration dataset")
    p.add_argument("--env", help="environment name")
    p.add_argument("--demos", type=int, help="number of demonstrations")
    p.add_argument("--seed", type=int, help="generation seed")
    p.add_argument("--out", required=True, help="output dataset path (JSONL)")
    p.add_argument("--config", help="run config (JSON)")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a policy on a dataset")
    p.add_argument("--data", required=True, help="dataset path")
    p.add_argument("--method", choices=("bc", "stable_mb", "stable_mf"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="run config (JSON)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained policy closed loop")
    p.add_argument("--policy", required=True, help="checkpoint path")
    p.add_argument("--protocol", help="evaluation protocol")
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="run config (JSON)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("analyze", help="stability analysis over a dataset")
    p.add_argument("--policy", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="dataset path")
    p.add_argument("--eps", type=float, help="observation error bound")
    p.add_argument("--horizon", type=float, help="bound-curve horizon")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="run config (JSON)")
    p.set_defaults(fn=cmd_analyze)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "fn", None) is None:
            parser.print_usage(sys.stderr)
            return 1
        return args.fn(args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ConfigError, UnsupportedConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except StableBCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
