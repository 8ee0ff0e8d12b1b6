import csv
import dataclasses
import hashlib
import json
import math
import os
from collections.abc import Iterable, Mapping
from pathlib import Path

import numpy as np

import privaudit


def key_to_word(key) -> int:
    """Map a sub-stream key (non-negative int or string) to a spawn-key word"""
    match key:
        case bool():
            return int(key)
        case int() | np.integer() if key >= 0:
            return int(key)
        case str():
            return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:4], "little")
        case _:
            raise TypeError(f"Invalid sub-stream key: {key!r}")


def substream(seed: int, *keys) -> np.random.Generator:
    """Independent generator keyed by (seed, keys...)

    The stream depends on nothing but its key, so sub-runs can be executed in
    any order or in parallel without changing their draws.
    """
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(key_to_word(k) for k in keys))
    return np.random.Generator(np.random.PCG64(seq))


def derive_seed(seed: int, *keys) -> int:
    """64-bit seed for a sub-component, derived the same way as `substream`"""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(key_to_word(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        # JSON has no infinity; keep the sentinel readable
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return value
    return obj


def fingerprint(obj, length=16) -> str:
    payload = json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:length]


def provenance_line(config_hash: str, master_seed: int) -> str:
    return f"# privaudit {privaudit.__version__} config={config_hash} master_seed={master_seed}"


def write_csv(path, fieldnames: list[str], rows: Iterable[Mapping], provenance: str | None = None):
    """Write an RFC-4180 CSV (CRLF line ends), optionally after a provenance line"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    with open(path, "w", encoding="utf-8", newline="") as fout:
        if provenance:
            fout.write(provenance + "\r\n")

        writer = csv.DictWriter(fout, fieldnames=fieldnames, extrasaction="ignore")
        writer.writeheader()

        for row in rows:
            writer.writerow({k: to_jsonable(v) for k, v in row.items()})


def read_csv(path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fin:
        lines = (line for line in fin if not line.startswith("#"))
        return list(csv.DictReader(lines))


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    with open(path, "w", encoding="utf-8") as fout:
        json.dump(to_jsonable(obj), fout, indent=2, sort_keys=True)
        fout.write("\n")


def output_dir(cli_value: str | None, config_value: str | None) -> Path:
    """Flag wins over PRIVAUDIT_OUT, which wins over the config file"""
    if cli_value:
        return Path(cli_value)
    if env_value := os.environ.get("PRIVAUDIT_OUT"):
        return Path(env_value)
    return Path(config_value or "privaudit-out")
