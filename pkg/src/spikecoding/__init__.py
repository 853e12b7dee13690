"""Bit-plane and color-model spike coding for spiking neural networks."""

from .tensor import IntTensor, Tape, Tensor, add_bias, avg_pool2d, conv2d, \
    elementwise, matmul
from .colorspace import GRAY, MODELS, ColorModelSpec, convert_color, spec_for
from .codec import EncoderConfig, SpikeTrain, bitplane_encode, combined_encode, \
    encode_batch, rate_encode, read_spkt, write_spkt
from .neuron import IfConfig, IfNeuron, SurrogateSpec, heaviside, if_step, \
    smooth_spike, surrogate_grad
from .network import SewJoin, SpikingNet, firing_rate, forward, load_weights, \
    save_weights, sew_join
from .snr import GradSnrReport, collect_per_sample_grads, grad_snr, \
    theoretical_magnitude
from .data import Dataset, load_idx, load_image_dir, split, synthetic, to_rgb, \
    write_idx
from .train import Adam, EpochRecord, RunConfig, evaluate, predict, \
    softmax_cross_entropy, train_run

__version__ = "0.1.0"
