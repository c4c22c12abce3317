from avs.crossref.model import (ScorerConfig, backward, forward, init_params, param_shapes,
                                patchify, sinusoidal_posenc, unpatchify)
from avs.crossref.scorer import (ScorerModel, TrainLog, TripletRecord, batch_loss, dataset_hash,
                                 load_weights, predict_map, predict_quality, prepare_input,
                                 save_weights, select_refs, train)

__all__ = ["ScorerConfig", "ScorerModel", "TrainLog", "TripletRecord", "backward", "batch_loss",
           "dataset_hash", "forward", "init_params", "load_weights", "param_shapes", "patchify",
           "predict_map", "predict_quality", "prepare_input", "save_weights", "select_refs",
           "sinusoidal_posenc", "train", "unpatchify"]
