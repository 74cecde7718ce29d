"""Gaugecal type definitions.

This module contains the Pydantic models shared by the estimation,
verification and pipeline modules, together with the custom exceptions
raised across the package.
"""

from __future__ import annotations

from collections.abc import Callable
from datetime import date
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

# ============================================================================
# Model Names
# ============================================================================


class ModelName(str, Enum):
    """Forecast sources compared by the verification suite."""

    BMA_PURE_ML = "bma_pure_ml"
    BMA_SIMPLIFIED = "bma_simplified"
    BMA_NAIVE = "bma_naive"
    EMOS = "emos"
    RAW = "raw_ensemble"


class BmaVariant(str, Enum):
    """EM estimation variants for the truncated normal BMA model."""

    PURE_ML = "pure_ml"
    SIMPLIFIED = "simplified"
    NAIVE = "naive"


BMA_VARIANT_BY_MODEL: dict[ModelName, BmaVariant] = {
    ModelName.BMA_PURE_ML: BmaVariant.PURE_ML,
    ModelName.BMA_SIMPLIFIED: BmaVariant.SIMPLIFIED,
    ModelName.BMA_NAIVE: BmaVariant.NAIVE,
}


# ============================================================================
# Ensemble Structure
# ============================================================================


class MemberGroup(BaseModel):
    """A group of exchangeable ensemble members."""

    model_config = ConfigDict(frozen=True)

    name: str
    """Group name (e.g. 'eps')."""

    size: int
    """Number of members in the group."""

    @field_validator("size")
    @classmethod
    def validate_size(cls, v: int) -> int:
        """Ensure the group holds at least one member."""
        if v < 1:
            raise ValueError("group size must be at least 1")
        return v

    @field_validator("name")
    @classmethod
    def validate_name(cls, v: str) -> str:
        """Ensure the group name is usable as a CSV value."""
        if not v.strip() or "," in v or ":" in v:
            raise ValueError(f"invalid group name: {v!r}")
        return v


class GroupSpec(BaseModel):
    """Ordered list of exchangeable member groups.

    Members are always laid out group-major: the first ``sizes[0]`` entries
    of a flattened member vector belong to the first group, and so on.
    """

    model_config = ConfigDict(frozen=True)

    groups: list[MemberGroup]
    """Groups in their canonical order."""

    @model_validator(mode="after")
    def validate_groups(self) -> GroupSpec:
        """Require at least one group and unique names."""
        if not self.groups:
            raise ValueError("at least one member group is required")
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise ValueError(f"group names must be unique: {names}")
        return self

    @classmethod
    def kaub(cls) -> GroupSpec:
        """The 79-member multi-model ensemble (HRES, EPS, COSMO-LEPS, GEFS)."""
        return cls.from_sizes({"hres": 1, "eps": 51, "cosmo_leps": 16, "ncep_gefs": 11})

    @classmethod
    def from_sizes(cls, sizes: dict[str, int]) -> GroupSpec:
        """Build a spec from an ordered name -> size mapping."""
        return cls(groups=[MemberGroup(name=n, size=s) for n, s in sizes.items()])

    @classmethod
    def from_string(cls, text: str) -> GroupSpec:
        """Parse ``"hres:1,eps:51"`` style group descriptions.

        Raises:
            ConfigError: If the text is malformed.
        """
        sizes: dict[str, int] = {}
        for part in text.split(","):
            name, sep, size = part.strip().partition(":")
            if not sep or not size.strip().isdigit():
                raise ConfigError(f"Invalid group description: {part!r} (expected name:size)")
            sizes[name.strip()] = int(size)
        try:
            return cls.from_sizes(sizes)
        except ValueError as e:
            raise ConfigError(f"Invalid group description: {e}") from e

    @property
    def n_groups(self) -> int:
        """Number of groups K."""
        return len(self.groups)

    @property
    def sizes(self) -> list[int]:
        """Group sizes M_k."""
        return [g.size for g in self.groups]

    @property
    def names(self) -> list[str]:
        """Group names in order."""
        return [g.name for g in self.groups]

    @property
    def total_members(self) -> int:
        """Total ensemble size M."""
        return sum(self.sizes)

    @property
    def offsets(self) -> np.ndarray:
        """Start index of each group in a flattened member vector."""
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.intp)

    def member_groups(self) -> np.ndarray:
        """Group index of every member in a flattened member vector."""
        return np.repeat(np.arange(self.n_groups), self.sizes)

    def index_of(self, name: str) -> int:
        """Position of a group by name.

        Raises:
            KeyError: If no group has that name.
        """
        for i, g in enumerate(self.groups):
            if g.name == name:
                return i
        raise KeyError(name)


# ============================================================================
# Forecast Cases
# ============================================================================


class ForecastCase(BaseModel):
    """One (location, issue date, lead time) forecast with its observation."""

    model_config = ConfigDict(frozen=True)

    location: str = "kaub"
    """Gauge identifier."""

    issue_date: date
    """Issue date (forecasts are initialised at 6 UTC)."""

    lead_time_h: int
    """Lead time in hours."""

    members: list[list[float]]
    """Member values per group, in GroupSpec order."""

    observation: float | None = None
    """Validating observation, None until it is known."""

    @field_validator("members")
    @classmethod
    def validate_members(cls, v: list[list[float]]) -> list[list[float]]:
        """Reject empty groups and non-finite member values."""
        for group in v:
            if not group:
                raise ValueError("member groups must not be empty")
            if not all(np.isfinite(group)):
                raise ValueError("member values must be finite")
        return v

    @field_validator("observation")
    @classmethod
    def validate_observation(cls, v: float | None) -> float | None:
        """Reject non-finite observations."""
        if v is not None and not np.isfinite(v):
            raise ValueError("observation must be finite")
        return v

    @property
    def case_id(self) -> str:
        """Stable identifier used to align score series."""
        return f"{self.location}/{self.issue_date.isoformat()}/{self.lead_time_h}h"

    def flat_members(self) -> np.ndarray:
        """All member values, group-major."""
        return np.concatenate([np.asarray(g, dtype=float) for g in self.members])

    def conforms_to(self, spec: GroupSpec) -> bool:
        """Whether the member layout matches a group spec."""
        return [len(g) for g in self.members] == spec.sizes

    def require_spec(self, spec: GroupSpec) -> None:
        """Raise if the member layout does not match a group spec.

        Raises:
            GroupSpecMismatchError: On any size mismatch.
        """
        if not self.conforms_to(spec):
            raise GroupSpecMismatchError(
                f"Case {self.case_id} has group sizes {[len(g) for g in self.members]}, "
                f"expected {spec.sizes}"
            )

    def map_values(self, fn: Callable[[float], float]) -> ForecastCase:
        """Apply an elementwise transform to members and observation."""
        members = [[float(fn(v)) for v in g] for g in self.members]
        obs = None if self.observation is None else float(fn(self.observation))
        return self.model_copy(update={"members": members, "observation": obs})


# ============================================================================
# Custom Exceptions
# ============================================================================


class GaugecalError(Exception):
    """Base exception for all gaugecal errors."""

    def __init__(self, message: str) -> None:
        self.message = message
        super().__init__(message)


class DomainError(GaugecalError, ValueError):
    """Raised when an argument lies outside a function's mathematical domain."""


class GroupSpecMismatchError(GaugecalError, ValueError):
    """Raised when a case's member layout does not match the group spec."""


class ConfigError(GaugecalError):
    """Raised for invalid run configuration."""


class FitError(GaugecalError):
    """Raised when a training set cannot support estimation."""


class DataError(GaugecalError):
    """Raised when an input file violates its schema."""

    def __init__(
        self,
        message: str,
        file: str | None = None,
        line: int | None = None,
        column: str | None = None,
    ) -> None:
        location = ":".join(str(p) for p in (file, line) if p is not None)
        if column is not None:
            location = f"{location} [{column}]" if location else f"[{column}]"
        super().__init__(f"{location}: {message}" if location else message)
        self.file = file
        self.line = line
        self.column = column
