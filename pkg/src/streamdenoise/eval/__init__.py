from .srt import (EffectiveSnr, SrtTable, measure_srt_improvement, preferred_ratio,
                  sign_test_p)
from .staircase import (PsychometricListener, SrtResult, StaircaseConfig,
                        listener_words_correct, run_staircase)
from .stats import DegenerateVariance, TTestResult, paired_t_test, pearson_r, preference_search

__all__ = ["EffectiveSnr", "SrtTable", "measure_srt_improvement", "preferred_ratio",
           "sign_test_p", "PsychometricListener", "SrtResult", "StaircaseConfig",
           "listener_words_correct", "run_staircase", "DegenerateVariance", "TTestResult",
           "paired_t_test", "pearson_r", "preference_search"]
