"""Speech inversion from cortical (spectro-temporal modulation) features.

audio -> auditory spectrogram -> cortical tensors -> HOSVD cores ->
context-stacked vectors -> feed-forward regressor -> Kalman smoothing -> TVs
"""

from .cortical import (
    CorticalSequence, StrfBank, cortical_transform, design_strf_bank, mfcc_baseline, ripple_stimulus,
)
from .errors import ChecksumError, DataError, ProvenanceError
from .frontend import (
    AuditorySpectrogram, CochlearFilterbank, audspec, cochlear_filter, design_cochlear_filterbank,
    frame_integrate, haircell_stage, lateral_inhibition,
)
from .regressor import (
    MlpArchitecture, MlpModel, TrainConfig, TrainReport, adam_step, forward, init_mlp,
    load_model, loss_and_grads, predict, save_model, train,
)
from .signal_io import (
    TV_NAMES, AudioBuffer, DatasetManifest, SynthSpec, TvTrajectory, align_frames, load_tv_csv,
    load_wav, make_splits, read_manifest, resample, synth_dataset, write_tv_csv, write_wav,
)
from .smoothing import EvalReport, KalmanParams, evaluate_predictions, kalman_smooth, ppmc
from .tensor_reduce import (
    HosvdBasis, ModeCovariances, ModeSpectrum, ReducedSequence, accumulate_mode_covariances,
    fit_hosvd, pc_energy, project, reconstruct, vectorize_with_context,
)

__version__ = "0.1.0"
