from . import calibration, evaluation, synthetic

__all__ = ["calibration", "evaluation", "synthetic"]
