from uabnn.bnn.core import (
    BnnModel,
    DeterministicMlp,
    GaussianPrior,
    LayerGrads,
    VariationalLinear,
    backward,
    draw_eps,
    elbo_loss,
    forward_sample,
    kl_layer,
    kl_model,
    loss_and_grad,
    nll_loss,
    sample_bias,
    sample_weights,
    softmax,
    softplus,
    inverse_softplus,
    zero_eps,
)
from uabnn.bnn.training import LossTrace, TrainConfig, kl_schedule, train_bbb, train_deterministic
from uabnn.bnn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
