"""Model documents for Gaugecal.

This module provides the versioned JSON document written for every
fitted model: the BMA or EMOS parameters together with the Box-Cox
coefficient, bounds and training window needed to reproduce the
predictive distribution of a forecast case given in cm.
"""

from __future__ import annotations

from datetime import date
from pathlib import Path
from typing import Annotated, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from gaugecal.bma import BmaModel, bma_predict
from gaugecal.boxcox import BoxCoxParam, bc_transform
from gaugecal.distributions import TruncatedNormal, TruncatedNormalMixture
from gaugecal.emos import EmosModel, emos_predict
from gaugecal.types import DataError, ForecastCase, ModelName

SCHEMA_VERSION = 1

FittedModel = Annotated[BmaModel | EmosModel, Field(discriminator="model_type")]


class ModelDocument(BaseModel):
    """A fitted model for one lead time and target date."""

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    schema_version: Literal[1] = SCHEMA_VERSION
    model_name: ModelName
    location: str
    lead_time_h: int
    target_date: date
    """Issue date the model predicts."""

    training_start: date
    training_end: date
    n_training: int

    box_cox: BoxCoxParam
    physical_bounds: tuple[float, float]
    """Truncation bounds in cm."""

    model: FittedModel

    @property
    def lam(self) -> float:
        return self.box_cox.lam

    def transform_case(self, case: ForecastCase) -> ForecastCase:
        """Map a case in cm to the model's transformed scale."""
        return case.map_values(lambda v: float(bc_transform(v, self.lam)))

    def predict(self, case: ForecastCase) -> TruncatedNormalMixture | TruncatedNormal:
        """Predictive distribution (transformed scale) for a case given in cm.

        Raises:
            GroupSpecMismatchError: If the case does not match the model's groups.
        """
        transformed = self.transform_case(case)
        if isinstance(self.model, BmaModel):
            return bma_predict(self.model, transformed)
        return emos_predict(self.model, transformed)

    def relative_path(self) -> Path:
        """Location below a run directory: models/lead_XXX/<date>_<model>.json."""
        return (
            Path("models")
            / f"lead_{self.lead_time_h:03d}"
            / f"{self.target_date.isoformat()}_{self.model_name.value}.json"
        )


def write_document(doc: ModelDocument, run_dir: Path) -> Path:
    """Write a document below ``run_dir`` and return its path."""
    path = Path(run_dir) / doc.relative_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(doc.model_dump_json(indent=2, by_alias=True) + "\n")
    return path


def read_document(path: Path) -> ModelDocument:
    """Parse a model document.

    Raises:
        DataError: If the file is missing or does not validate.
    """
    try:
        return ModelDocument.model_validate_json(Path(path).read_text())
    except OSError as e:
        raise DataError(f"cannot read model document: {e}", file=str(path)) from e
    except ValidationError as e:
        raise DataError(f"invalid model document: {e}", file=str(path)) from e


def iter_documents(run_dir: Path) -> list[Path]:
    """All model documents of a run, in path order."""
    return sorted((Path(run_dir) / "models").glob("lead_*/*.json"))


def document_summary(doc: ModelDocument) -> str:
    """Human-readable summary used by the ``inspect`` command."""
    model = doc.model
    lines = [
        f"model:        {doc.model_name.value}",
        f"location:     {doc.location}",
        f"lead time:    {doc.lead_time_h} h",
        f"target date:  {doc.target_date.isoformat()}",
        f"training:     {doc.training_start.isoformat()} .. {doc.training_end.isoformat()} "
        f"({doc.n_training} cases)",
        f"box-cox:      lambda = {doc.lam:g}",
        f"bounds:       {doc.physical_bounds[0]:g} .. {doc.physical_bounds[1]:g} cm "
        f"({model.lower:.6g} .. {model.upper:.6g} transformed)",
        f"parameters:   {model.n_free_parameters} free",
    ]
    if isinstance(model, BmaModel):
        for name, mass, a, b in zip(
            model.group_spec.names, model.group_masses, model.alpha, model.beta, strict=True
        ):
            lines.append(f"  {name:<12} mass={mass:.4f} alpha={a:.5g} beta={b:.5g}")
        lines.append(f"  sigma={model.sigma:.5g}")
        diag = model.diagnostics
        lines.append(
            f"em:           {diag.iterations} iterations, loglik={diag.log_likelihood:.6g}, "
            f"converged={diag.converged}"
        )
        flags = diag.flags
    else:
        coefs = ", ".join(f"{v:.5g}" for v in model.a)
        lines.append(f"  a=[{coefs}] b0={model.b0:.5g} b1={model.b1:.5g}")
        diag_e = model.diagnostics
        lines.append(
            f"optimizer:    {diag_e.iterations} evaluations, mean crps={diag_e.mean_crps:.6g}, "
            f"converged={diag_e.converged}"
        )
        flags = diag_e.flags
    if flags:
        lines.append(f"flags:        {', '.join(flags)}")
    return "\n".join(lines)
