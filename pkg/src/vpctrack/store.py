"""Directory-tree document store for patients, plans, models, traces, results.

One directory per patient, one per session; JSON and CSV files written with
the temp-fsync-rename sequence so an interrupted write leaves either the old
record or the new one, never a torn file.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .session import SessionPlan, SessionResult


class DuplicateId(Exception):
    pass


class NotFound(Exception):
    pass


class UnknownPatient(Exception):
    pass


class StorageFull(Exception):
    pass


@dataclass
class PatientRecord:
    patient_id: str
    label: str = ""
    birth_year: Optional[int] = None
    notes: str = ""
    created_at: float = 0.0

    def to_json(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "label": self.label,
            "birth_year": self.birth_year,
            "notes": self.notes,
            "created_at": self.created_at,
        }

    @staticmethod
    def from_json(doc: dict) -> "PatientRecord":
        return PatientRecord(
            patient_id=doc["patient_id"],
            label=doc.get("label", ""),
            birth_year=doc.get("birth_year"),
            notes=doc.get("notes", ""),
            created_at=doc.get("created_at", 0.0),
        )


@dataclass
class SessionEnvelope:
    session_id: str
    patient_id: str
    plan: SessionPlan
    result: Optional[SessionResult]
    status: str  # "complete" | "aborted"
    started_at: float
    gaze_net_ref: str = ""
    trace_refs: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "patient_id": self.patient_id,
            "plan": self.plan.to_json(),
            "result": self.result.to_json() if self.result else None,
            "status": self.status,
            "started_at": self.started_at,
            "gaze_net_ref": self.gaze_net_ref,
            "trace_refs": self.trace_refs,
        }

    @staticmethod
    def from_json(doc: dict) -> "SessionEnvelope":
        return SessionEnvelope(
            session_id=doc["session_id"],
            patient_id=doc["patient_id"],
            plan=SessionPlan.from_json(doc["plan"]),
            result=SessionResult.from_json(doc["result"]) if doc.get("result") else None,
            status=doc["status"],
            started_at=doc.get("started_at", 0.0),
            gaze_net_ref=doc.get("gaze_net_ref", ""),
            trace_refs=doc.get("trace_refs", {}),
        )


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        if exc.errno == 28:  # ENOSPC
            raise StorageFull(str(exc)) from exc
        raise


class Store:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "patients").mkdir(parents=True, exist_ok=True)

    # ---------------------------------------------------------- patients

    def _patient_dir(self, patient_id: str) -> Path:
        safe = patient_id.replace("/", "_")
        return self.root / "patients" / safe

    def put_patient(self, record: PatientRecord, update: bool = False) -> None:
        pdir = self._patient_dir(record.patient_id)
        path = pdir / "patient.json"
        if path.exists() and not update:
            raise DuplicateId(f"patient {record.patient_id} already stored")
        if record.created_at == 0.0:
            record.created_at = time.time()
        pdir.mkdir(parents=True, exist_ok=True)
        _atomic_write(path, json.dumps(record.to_json(), indent=1).encode())

    def get_patient(self, patient_id: str) -> PatientRecord:
        path = self._patient_dir(patient_id) / "patient.json"
        if not path.exists():
            raise NotFound(f"patient {patient_id}")
        return PatientRecord.from_json(json.loads(path.read_text()))

    def list_patients(self) -> list[PatientRecord]:
        records = []
        for pdir in sorted((self.root / "patients").iterdir()):
            path = pdir / "patient.json"
            if path.is_file():
                records.append(PatientRecord.from_json(json.loads(path.read_text())))
        records.sort(key=lambda r: (r.created_at, r.patient_id))
        return records

    # ---------------------------------------------------------- sessions

    def _session_dir(self, patient_id: str, session_id: str) -> Path:
        return self._patient_dir(patient_id) / "sessions" / session_id.replace("/", "_")

    def put_session(
        self,
        envelope: SessionEnvelope,
        gaze_csv: Optional[str] = None,
        ppg_csv: Optional[str] = None,
        gaze_net_json: Optional[dict] = None,
        batch_archive: Optional[bytes] = None,
    ) -> Path:
        if not (self._patient_dir(envelope.patient_id) / "patient.json").exists():
            raise UnknownPatient(envelope.patient_id)
        sdir = self._session_dir(envelope.patient_id, envelope.session_id)
        sdir.mkdir(parents=True, exist_ok=True)
        refs = dict(envelope.trace_refs)
        if gaze_csv is not None:
            _atomic_write(sdir / "gaze.csv", gaze_csv.encode())
            refs["gaze_csv"] = "gaze.csv"
        if ppg_csv is not None:
            _atomic_write(sdir / "ppg.csv", ppg_csv.encode())
            refs["ppg_csv"] = "ppg.csv"
        if gaze_net_json is not None:
            _atomic_write(sdir / "gazenet.json", json.dumps(gaze_net_json).encode())
            envelope.gaze_net_ref = "gazenet.json"
        if batch_archive is not None:
            _atomic_write(sdir / "frames.archive", batch_archive)
            refs["batch_archive"] = "frames.archive"
        envelope.trace_refs = refs
        _atomic_write(sdir / "plan.json", json.dumps(envelope.plan.to_json(), indent=1).encode())
        if envelope.result is not None:
            _atomic_write(
                sdir / "result.json", json.dumps(envelope.result.to_json(), indent=1).encode()
            )
        _atomic_write(sdir / "envelope.json", json.dumps(envelope.to_json(), indent=1).encode())
        return sdir

    def get_session(self, patient_id: str, session_id: str) -> SessionEnvelope:
        path = self._session_dir(patient_id, session_id) / "envelope.json"
        if not path.exists():
            raise NotFound(f"session {session_id} of patient {patient_id}")
        return SessionEnvelope.from_json(json.loads(path.read_text()))

    def query_sessions(self, patient_id: str) -> list[SessionEnvelope]:
        if not (self._patient_dir(patient_id) / "patient.json").exists():
            raise UnknownPatient(patient_id)
        sessions_dir = self._patient_dir(patient_id) / "sessions"
        if not sessions_dir.exists():
            return []
        out = []
        for sdir in sorted(sessions_dir.iterdir()):
            path = sdir / "envelope.json"
            if path.is_file():
                out.append(SessionEnvelope.from_json(json.loads(path.read_text())))
        out.sort(key=lambda e: (e.started_at, e.session_id))
        return out

    def session_file(self, patient_id: str, session_id: str, name: str) -> Path:
        return self._session_dir(patient_id, session_id) / name

    def integrity_check(self) -> list[str]:
        """Names of referenced files that do not exist (empty list = consistent)."""
        problems = []
        for patient in self.list_patients():
            for envelope in self.query_sessions(patient.patient_id):
                sdir = self._session_dir(patient.patient_id, envelope.session_id)
                refs = list(envelope.trace_refs.values())
                if envelope.gaze_net_ref:
                    refs.append(envelope.gaze_net_ref)
                for ref in refs:
                    if not (sdir / ref).exists():
                        problems.append(f"{patient.patient_id}/{envelope.session_id}/{ref}")
        return problems
