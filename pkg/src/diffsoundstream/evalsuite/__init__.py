from .metrics import log_spectral_distortion, mel_distance, spectral_metrics
from .sweep import SYSTEMS, EvalReport, Record, depth_sweep, plot_report
from .wer import WerResult, corpus_wer, wer_eval, word_edits
