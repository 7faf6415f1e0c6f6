"""Loading manifest records together with their formulas and certificates."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .cnf import CnfFormula, ResolutionProof
from .formats import emit_trace, parse_assignment, parse_dimacs, parse_trace
from .teacher import read_manifest, write_manifest


@dataclass
class Sample:
    record: dict
    formula: CnfFormula
    proof: ResolutionProof | None = None
    assignment: dict[int, bool] | None = None

    @property
    def id(self) -> str:
        return self.record.get("id", "")

    @property
    def unsat(self) -> bool:
        return self.record.get("verdict") == "UNSAT"


def load_sample(root: Path, rec: dict) -> Sample:
    f = parse_dimacs((root / rec["path"]).read_text())
    s = Sample(rec, f)
    cert = rec.get("certificate")
    if cert:
        text = (root / cert).read_text()
        if rec.get("verdict") == "UNSAT":
            s.proof = parse_trace(text, f)
        else:
            s.assignment = parse_assignment(text)
    return s


def load_samples(manifest_path: str | Path) -> list[Sample]:
    manifest_path = Path(manifest_path)
    return [load_sample(manifest_path.parent, r) for r in read_manifest(manifest_path)
            if "error" not in r]


def store_proof(root: str | Path, sample: Sample, proof: ResolutionProof) -> None:
    """Rewrite a sample's trace file and keep the record in step."""
    rec = sample.record
    cert = rec.get("certificate") or str(Path(rec["path"]).with_suffix(".trace"))
    Path(root, cert).write_text(emit_trace(proof, sample.formula))
    rec["certificate"] = cert
    rec["proof_length"] = len(proof)
    sample.proof = proof


def save_records(manifest_path: str | Path, samples: list[Sample]) -> None:
    write_manifest(manifest_path, [s.record for s in samples])
