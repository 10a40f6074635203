"""Run configuration: INI-style file, ``section.key=value`` overrides, defaults.

Every key has a default, so an empty file (or none) is a valid config.
Precedence is command-line flag > ``--set`` override > file > default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .agent import Hyperparams, parse_beta_schedule
from .baselines import BaselineConfig
from .env import DEFAULT_BITRATES_KBPS, VideoSpec, make_video
from .harness import Profile
from .qoe import QoEConfig

DEFAULTS: dict[str, dict[str, str]] = {
    "video": {
        "bitrates": ",".join(str(b) for b in DEFAULT_BITRATES_KBPS),
        "chunk_duration": "4.0",
        "num_chunks": "48",
        "buffer_capacity": "60.0",
        "size_jitter": "0.1",
        "seed": "0",
    },
    "train": {
        "mode": "alisa",
        "gamma": "0.99",
        "actor_lr": "0.0001",
        "critic_lr": "0.001",
        "beta_schedule": "1,0.75,0.5,0.25,0.1",
        "rho_bar": "1.0",
        "c_bar": "1.0",
        "epochs": "5000",
        "actors": "2",
        "sync_interval": "4",
        "hidden": "128",
        "optimizer": "sgd",
        "val_interval": "100",
        "seed": "0",
        "threads": "0",
    },
    "qoe": {
        "variant": "linear",
        "rebuffer_penalty": "",
    },
    "traces": {
        "train": "20",
        "val": "5",
        "test": "10",
        "duration": "400",
        "mean_bandwidth": "2.5",
        "volatility": "0.4",
        "seed": "0",
        "train_dir": "",
        "val_dir": "",
        "test_dir": "",
    },
    "baselines": {
        "bb_reservoir": "5.0",
        "bb_cushion": "10.0",
        "rb_window": "5",
        "bola_utility_weight": "1.0",
        "bola_startup": "1.0",
        "mpc_horizon": "5",
        "mpc_error_window": "5",
    },
    "eval": {
        "loss": "0",
        "qoe_variants": "linear",
    },
}


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(" ", "").split(",") if x)


@dataclass
class RunConfig:
    parser: configparser.ConfigParser

    def get(self, section: str, key: str) -> str:
        return self.parser.get(section, key)

    def set(self, section: str, key: str, value) -> None:
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        self.parser.set(section, key, str(value))

    def _typed(self, section, key, conv):
        raw = self.get(section, key)
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from exc

    def video(self) -> VideoSpec:
        t = lambda k, c: self._typed("video", k, c)  # noqa: E731
        return make_video(t("bitrates", _floats), t("chunk_duration", float), t("num_chunks", int),
                          t("buffer_capacity", float), t("size_jitter", float), t("seed", int))

    def hyperparams(self) -> Hyperparams:
        t = lambda k, c: self._typed("train", k, c)  # noqa: E731
        try:
            return Hyperparams(
                gamma=t("gamma", float), actor_lr=t("actor_lr", float), critic_lr=t("critic_lr", float),
                beta_schedule=t("beta_schedule", parse_beta_schedule),
                rho_bar=t("rho_bar", float), c_bar=t("c_bar", float), epochs=t("epochs", int),
                actors=t("actors", int), sync_interval=t("sync_interval", int),
                hidden=t("hidden", lambda s: tuple(int(x) for x in _floats(s))),
                optimizer=t("optimizer", str),
            )
        except ValueError as exc:
            raise ConfigError(f"[train]: {exc}") from exc

    def qoe(self, variant: str | None = None) -> QoEConfig:
        penalty = self.get("qoe", "rebuffer_penalty").strip()
        try:
            return QoEConfig(variant or self.get("qoe", "variant"),
                             float(penalty) if penalty else None,
                             bitrates_kbps=self._typed("video", "bitrates", _floats))
        except ValueError as exc:
            raise ConfigError(f"[qoe]: {exc}") from exc

    def baselines(self) -> BaselineConfig:
        s = "baselines"
        try:
            return BaselineConfig(
                bb_reservoir=self._typed(s, "bb_reservoir", float),
                bb_cushion=self._typed(s, "bb_cushion", float),
                rb_window=self._typed(s, "rb_window", int),
                bola_utility_weight=self._typed(s, "bola_utility_weight", float),
                bola_startup=self._typed(s, "bola_startup", float),
                mpc_horizon=self._typed(s, "mpc_horizon", int),
                mpc_error_window=self._typed(s, "mpc_error_window", int),
            )
        except ValueError as exc:
            raise ConfigError(f"[baselines]: {exc}") from exc

    def profile(self) -> Profile:
        t = lambda k, c: self._typed("traces", k, c)  # noqa: E731
        return Profile(t("train", int), t("val", int), t("test", int), t("duration", float),
                       t("mean_bandwidth", float), t("volatility", float))

    def losses(self) -> tuple[float, ...]:
        return self._typed("eval", "loss", _floats)

    def qoe_variants(self) -> tuple[str, ...]:
        return tuple(v for v in self.get("eval", "qoe_variants").replace(" ", "").split(",") if v)


def load_config(path=None, overrides=()) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict(DEFAULTS)
    cfg = RunConfig(parser)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        user = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
        try:
            user.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section in user.sections():
            for key, value in user.items(section):
                cfg.set(section, key, value)
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not section.key=value")
        cfg.set(section, name, value.strip())
    return cfg
