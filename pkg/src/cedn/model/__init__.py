from .network import (
    LayerSpec,
    Network,
    NetworkConfig,
    build_network,
    decoder_table,
    predict,
)
from .loss import weighted_logistic_loss
from .training import TrainConfig, make_minibatch, train, train_step
