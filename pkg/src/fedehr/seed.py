"""Deterministic fixture generator.

Produces everything a desk-scale federation run needs: per-hospital
legacy stores in their native column names and date formats, mapping and
credential files, key material, a topology file, and a manifest the test
oracles use to compute expected answers by brute force. The same rng
seed yields byte-identical output.
"""

from __future__ import annotations

import hashlib
import json
import random
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any

from .adapter import LEGACY_TZ
from .model import ValidationError, format_rfc3339, hash_patient_id

DEFAULT_HOSPITALS = ("HC", "KW", "UH")
INDEX_SERVER_ID = "PI"

SURNAMES = [
    "Yang", "Chan", "Wong", "Leung", "Ho", "Lam", "Cheung", "Ng", "Lei", "Chao",
    "Fong", "Sou", "Tam", "Un", "Vong", "Ip", "Kuok", "Lou", "Mak", "Sit",
]
GIVEN_NAMES = [
    "Yingying", "Wei", "Mei Ling", "Ka Man", "Hou In", "Chi Hang", "Sio Fan",
    "Man Wai", "Kin Ming", "Sok I", "Weng Kei", "Ka Ho", "Iok Teng", "Chon Hou",
    "Mei Kei", "Wai San", "Pui Shan", "Tsz Yin", "Hok Lam", "Yuen Ting",
]
DOCTOR_NAMES = [
    "Dr. Chan", "Dr. Wong", "Dr. Leung", "Dr. Ho", "Dr. Lam", "Dr. Pereira",
    "Dr. Cheung", "Dr. Fong", "Dr. Rodrigues", "Dr. Mak",
]
DIALYZER_MODELS = ["FX-80", "FX-100", "Polyflux 170H", "Elisio-17H", "Rexeed-21A"]
NOTE_POOL = [
    "uneventful session",
    "mild cramping toward the end",
    "blood pressure stable throughout",
    "透析過程順利",
    "輕微低血壓，已處理",
    "access site checked, no issues",
]

# Native column names per hospital, keyed by unified target.
LEGACY_COLUMNS: dict[str, dict[str, str]] = {
    "HC": {
        "patient_id": "card_id",
        "ehr_id": "record_id",
        "patient_name": "p_name",
        "doctor_name": "d_name",
        "recorded_at": "rec_time",
        "ehr_type": "rec_type",
        "language": "lang",
        "payload.pre_weight_kg": "pre_w",
        "payload.post_weight_kg": "post_w",
        "payload.systolic_mmHg": "sys_bp",
        "payload.diastolic_mmHg": "dia_bp",
        "payload.duration_min": "dur_min",
        "payload.dialyzer_model": "dialyzer",
        "payload.notes": "notes",
    },
    "KW": {
        "patient_id": "identitiy_id",
        "ehr_id": "id_ehr",
        "patient_name": "patient_n",
        "doctor_name": "dotctor_n",
        "recorded_at": "time_rec",
        "ehr_type": "type_ehr",
        "language": "lang",
        "payload.pre_weight_kg": "w_before",
        "payload.post_weight_kg": "w_after",
        "payload.systolic_mmHg": "bp_sys",
        "payload.diastolic_mmHg": "bp_dia",
        "payload.duration_min": "minutes",
        "payload.dialyzer_model": "machine",
        "payload.notes": "remark",
    },
    "UH": {
        "patient_id": "id",
        "ehr_id": "eid",
        "patient_name": "pname",
        "doctor_name": "dname",
        "recorded_at": "ts",
        "ehr_type": "etype",
        "language": "lang",
        "payload.pre_weight_kg": "wpre",
        "payload.post_weight_kg": "wpost",
        "payload.systolic_mmHg": "sbp",
        "payload.diastolic_mmHg": "dbp",
        "payload.duration_min": "dmin",
        "payload.dialyzer_model": "dmodel",
        "payload.notes": "note",
    },
}

# Legacy timestamp encoding per hospital; chosen to force nontrivial
# coercions (two date-pattern styles and one epoch column).
DATE_COERCION = {
    "HC": "datetime:yyyy-MM-dd HH:mm",
    "KW": "datetime:dd/MM/yyyy HH:mm",
    "UH": "epoch_seconds",
}

FIXTURE_CREDENTIALS = {
    "dr.chan": {"secret": "chan-secret", "role": "doctor"},
    "dr.wong": {"secret": "wong-secret", "role": "doctor"},
    "auditor": {"secret": "audit-secret", "role": "admin"},
}

_RANGE_START = datetime(2010, 1, 1, 8, 0, tzinfo=LEGACY_TZ)
_RANGE_END = datetime(2016, 12, 31, 20, 0, tzinfo=LEGACY_TZ)


def _derive_key(label: str, rng_seed: int) -> str:
    return hashlib.sha256(f"fedehr:{label}:{rng_seed}".encode()).hexdigest()


def _format_legacy_time(hospital: str, when: datetime) -> str:
    if hospital == "HC":
        return when.strftime("%Y-%m-%d %H:%M")
    if hospital == "KW":
        return when.strftime("%d/%m/%Y %H:%M")
    return str(int(when.timestamp()))


def build_mapping_doc(hospital: str) -> dict[str, Any]:
    columns = LEGACY_COLUMNS[hospital]
    entries = [{"legacy": legacy, "unified": unified} for unified, legacy in columns.items()]
    coercions = [
        {"field": "recorded_at", "source": DATE_COERCION[hospital], "target": "rfc3339"},
        {"field": "payload.pre_weight_kg", "source": "string", "target": "float"},
        {"field": "payload.post_weight_kg", "source": "string", "target": "float"},
        {"field": "payload.systolic_mmHg", "source": "string", "target": "int"},
        {"field": "payload.diastolic_mmHg", "source": "string", "target": "int"},
        {"field": "payload.duration_min", "source": "string", "target": "int"},
    ]
    return {"hospital_id": hospital, "entries": entries, "type_coercions": coercions}


def _write_json(path: Path, doc: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(doc, sort_keys=True, ensure_ascii=False, indent=1) + "\n", "utf-8"
    )


def seed(
    patients: int,
    records: int,
    hospitals: list[str],
    rng_seed: int,
    out_dir: str | Path,
    *,
    base_port: int = 8640,
    share_ratio: float = 0.97,
) -> Path:
    """Generate a complete fixture directory; returns its path."""
    if patients < 1 or records < patients:
        raise ValidationError("need records >= patients >= 1")
    if not hospitals:
        raise ValidationError("need at least one hospital")
    unknown = [h for h in hospitals if h not in LEGACY_COLUMNS]
    if unknown:
        raise ValidationError(f"no legacy column definitions for {unknown}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(rng_seed)

    federation_key_hex = _derive_key("federation", rng_seed)
    federation_key = bytes.fromhex(federation_key_hex)
    (out / "keys").mkdir(exist_ok=True)
    (out / "keys" / "federation.key").write_text(federation_key_hex + "\n")
    signing_keys = {
        server: _derive_key(f"sign:{server}", rng_seed)
        for server in [INDEX_SERVER_ID, *hospitals]
    }
    _write_json(out / "keys" / "signing_keys.json", signing_keys)

    # Patients. Patient 0 is pinned so the walkthrough scenario is stable.
    patient_rows = [{"name": "Yang Yingying", "raw_id": "M1234567"}]
    used_ids = {"M1234567"}
    while len(patient_rows) < patients:
        raw_id = f"M{rng.randrange(1000000, 9999999)}"
        if raw_id in used_ids:
            continue
        used_ids.add(raw_id)
        patient_rows.append(
            {"name": f"{rng.choice(SURNAMES)} {rng.choice(GIVEN_NAMES)}", "raw_id": raw_id}
        )
    for row in patient_rows:
        row["digest"] = hash_patient_id(row["raw_id"], federation_key)

    # Records: every patient gets at least one, the rest land randomly.
    assignments = list(range(patients)) + [
        rng.randrange(patients) for _ in range(records - patients)
    ]
    rng.shuffle(assignments)

    span_minutes = int((_RANGE_END - _RANGE_START).total_seconds() // 60)
    id_width = 4  # zfill(4) stays injective past 9999, so ids never collide
    per_hospital_seq: dict[str, int] = {h: 0 for h in hospitals}
    manifest_records: list[dict[str, Any]] = []
    legacy_lines: dict[str, list[str]] = {h: [] for h in hospitals}
    mtime_base = 1483228800  # fixture modification clock, one tick per record

    for order, patient_idx in enumerate(assignments):
        hospital = hospitals[rng.randrange(len(hospitals))]
        per_hospital_seq[hospital] += 1
        ehr_id = str(per_hospital_seq[hospital]).zfill(id_width)
        when = _RANGE_START + timedelta(minutes=rng.randrange(span_minutes))
        shared = rng.random() < share_ratio
        if hospital == hospitals[0] and ehr_id == "0221":
            # Keep the walkthrough record: first hospital's 0221 belongs to
            # patient 0 and is always shared.
            patient_idx = 0
            shared = True
        patient = patient_rows[patient_idx]
        pre_weight = round(rng.uniform(45.0, 90.0), 1)
        post_weight = round(pre_weight - rng.uniform(0.5, 4.0), 1)
        payload_values = {
            "payload.pre_weight_kg": f"{pre_weight:.1f}",
            "payload.post_weight_kg": f"{post_weight:.1f}",
            "payload.systolic_mmHg": str(rng.randrange(95, 180)),
            "payload.diastolic_mmHg": str(rng.randrange(55, 110)),
            "payload.duration_min": str(rng.choice([180, 210, 240, 270])),
            "payload.dialyzer_model": rng.choice(DIALYZER_MODELS),
            "payload.notes": rng.choice(NOTE_POOL),
        }
        language = "zh" if rng.random() < 0.7 else "en"
        columns = LEGACY_COLUMNS[hospital]
        doc = {
            columns["patient_id"]: patient["raw_id"],
            columns["ehr_id"]: ehr_id,
            columns["patient_name"]: patient["name"],
            columns["doctor_name"]: rng.choice(DOCTOR_NAMES),
            columns["recorded_at"]: _format_legacy_time(hospital, when),
            columns["ehr_type"]: "hemodialysis",
            columns["language"]: language,
        }
        for unified_name, value in payload_values.items():
            doc[columns[unified_name]] = value
        legacy_lines[hospital].append(
            json.dumps(
                {"doc": doc, "mtime": mtime_base + order, "rev": 1, "shared": shared},
                sort_keys=True,
                ensure_ascii=False,
            )
        )
        manifest_records.append(
            {
                "hospital_id": hospital,
                "ehr_id": ehr_id,
                "patient_digest": patient["digest"],
                "recorded_at": format_rfc3339(when),
                "ehr_type": "hemodialysis",
                "shared": shared,
            }
        )

    legacy_dir = out / "legacy"
    legacy_dir.mkdir(exist_ok=True)
    for hospital in hospitals:
        (legacy_dir / f"{hospital}.jsonl").write_text(
            "\n".join(legacy_lines[hospital]) + "\n", "utf-8"
        )

    for hospital in hospitals:
        _write_json(out / "mappings" / f"{hospital}.json", build_mapping_doc(hospital))
        hashed = {
            doctor_id: {
                "secret_sha256": hashlib.sha256(entry["secret"].encode()).hexdigest(),
                "role": entry["role"],
            }
            for doctor_id, entry in FIXTURE_CREDENTIALS.items()
        }
        _write_json(out / "credentials" / f"{hospital}.json", hashed)

    servers: list[dict[str, Any]] = [
        {
            "id": INDEX_SERVER_ID,
            "role": "index",
            "host": "127.0.0.1",
            "port": base_port,
            "data_dir": f"state/{INDEX_SERVER_ID}",
        }
    ]
    for offset, hospital in enumerate(hospitals, start=1):
        servers.append(
            {
                "id": hospital,
                "role": "hospital",
                "host": "127.0.0.1",
                "port": base_port + offset,
                "data_dir": f"state/{hospital}",
                "legacy_store": f"legacy/{hospital}.jsonl",
                "mapping_file": f"mappings/{hospital}.json",
                "credentials_file": f"credentials/{hospital}.json",
                "sync_interval_s": 60,
            }
        )
    _write_json(
        out / "topology.json",
        {
            "federation_key": "keys/federation.key",
            "signing_keys": "keys/signing_keys.json",
            "servers": servers,
        },
    )

    manifest = {
        "rng_seed": rng_seed,
        "hospitals": list(hospitals),
        "patients": patient_rows,
        "records": manifest_records,
        "credentials": FIXTURE_CREDENTIALS,
    }
    _write_json(out / "manifest.json", manifest)
    return out


def load_manifest(fixture_dir: str | Path) -> dict[str, Any]:
    return json.loads((Path(fixture_dir) / "manifest.json").read_text("utf-8"))


def manifest_locate_oracle(
    manifest: dict[str, Any],
    patient_digest: str,
    date_from: str,
    date_to: str,
    ehr_types: tuple[str, ...] = (),
    hospitals: tuple[str, ...] = (),
) -> list[dict[str, str]]:
    """Brute-force expected locate rows straight from the manifest."""
    from .index_core import sort_rows
    from .model import parse_rfc3339

    start = parse_rfc3339(date_from)
    end = parse_rfc3339(date_to)
    types = set(ehr_types)
    wanted_hospitals = set(hospitals)
    rows = [
        {
            "ehr_id": r["ehr_id"],
            "ehr_type": r["ehr_type"],
            "recorded_at": r["recorded_at"],
            "location": r["hospital_id"],
        }
        for r in manifest["records"]
        if r["shared"]
        and r["patient_digest"] == patient_digest
        and (not types or r["ehr_type"] in types)
        and (not wanted_hospitals or r["hospital_id"] in wanted_hospitals)
        and start <= parse_rfc3339(r["recorded_at"]) <= end
    ]
    return sort_rows(rows)
