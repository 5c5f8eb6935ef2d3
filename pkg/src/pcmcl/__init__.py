"""Respiratory-sound classification with multi-cycle concatenation,
3-label targets and a patient-matching auxiliary task."""

__version__ = "0.1.0"

from .labels import IcbhiClass, Label2, Label3, label3_or, label3_to_label2, to_icbhi_class  # noqa: E402

__all__ = ["IcbhiClass", "Label2", "Label3", "label3_or", "label3_to_label2", "to_icbhi_class", "__version__"]
