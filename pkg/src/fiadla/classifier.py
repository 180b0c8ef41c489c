"""Small-classifier fault experiment.

A fixed 8x8 glyph classifier (3x3 conv front end plus a matched-filter
fully-connected head) runs through the array simulator under sampled PE
fault configurations, measuring prediction accuracy per configuration.
The dataset is synthetic (ten glyph templates with shift and noise
augmentation) so the experiment is hermetic; `load_image_dataset` can
ingest externally supplied images in the same shape when wanted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import array_sim
from .faults import sample_random_faults
from .fxp import FxpTensor, LayerSpec, Network, forward, quantize
from .redundancy import HcaConfig
from .rng import Rng

IMAGE_SIZE = 8
N_CLASSES = 10
IMAGE_FRAC_BITS = 5

# 8x8 bipolar glyphs, one per class ('#' = +1, '.' = -1)
_GLYPHS = [
    # 0
    ".######."
    "##....##"
    "##....##"
    "##....##"
    "##....##"
    "##....##"
    "##....##"
    ".######.",
    # 1
    "...##..."
    "..###..."
    "...##..."
    "...##..."
    "...##..."
    "...##..."
    "...##..."
    ".######.",
    # 2
    ".######."
    "##....##"
    "......##"
    "....###."
    "..###..."
    ".##....."
    "##......"
    "########",
    # 3
    "#######."
    ".....##."
    "....##.."
    "..####.."
    ".....##."
    "......##"
    "##....##"
    ".######.",
    # 4
    "....###."
    "...####."
    "..##.##."
    ".##..##."
    "########"
    ".....##."
    ".....##."
    ".....##.",
    # 5
    "########"
    "##......"
    "##......"
    "#######."
    "......##"
    "......##"
    "##....##"
    ".######.",
    # 6
    "..#####."
    ".##....."
    "##......"
    "#######."
    "##....##"
    "##....##"
    "##....##"
    ".######.",
    # 7
    "########"
    "......##"
    ".....##."
    "....##.."
    "...##..."
    "..##...."
    "..##...."
    "..##....",
    # 8
    ".######."
    "##....##"
    "##....##"
    ".######."
    "##....##"
    "##....##"
    "##....##"
    ".######.",
    # 9
    ".######."
    "##....##"
    "##....##"
    ".#######"
    "......##"
    "......##"
    ".....##."
    ".####...",
]


def glyph_templates() -> np.ndarray:
    """(10, 8, 8) float array of bipolar (+1/-1) glyphs."""
    out = np.empty((N_CLASSES, IMAGE_SIZE, IMAGE_SIZE))
    for i, g in enumerate(_GLYPHS):
        rows = [g[r * IMAGE_SIZE:(r + 1) * IMAGE_SIZE] for r in range(IMAGE_SIZE)]
        out[i] = np.array([[1.0 if ch == "#" else -1.0 for ch in row]
                           for row in rows])
    return out


# fixed +-1/3 pattern kernels for conv channels 4-15 ('#' = +, '.' = -);
# sixteen channels keep every array column busy during the conv layer
_PATTERN_KERNELS = [
    "..#....##", "##..##...", ".#..##.##", "##...###.",
    "....#.#..", "...#...##", "###..##..", "...##..#.",
    "#.#.###..", ".##..#.##", "###......", "#..###...",
]


def build_classifier() -> Network:
    """The fixed shipped classifier: a 16-channel 3x3 conv front end
    (identity, edge, center-surround and fixed pattern kernels) feeding
    a matched-filter FC head built from the templates' conv features."""
    kernels = np.zeros((3, 3, 1, 16))
    kernels[1, 1, 0, 0] = 1.0                       # identity
    kernels[0, :, 0, 1] = -1.0 / 3.0                # horizontal edge
    kernels[2, :, 0, 1] = 1.0 / 3.0
    kernels[:, 0, 0, 2] = -1.0 / 3.0                # vertical edge
    kernels[:, 2, 0, 2] = 1.0 / 3.0
    kernels[:, :, 0, 3] = -1.0 / 8.0                # center-surround
    kernels[1, 1, 0, 3] = 1.0
    for ch, pattern in enumerate(_PATTERN_KERNELS, start=4):
        pat = np.array([1.0 if c == "#" else -1.0 for c in pattern])
        kernels[:, :, 0, ch] = pat.reshape(3, 3) / 3.0
    conv_w = quantize(kernels, 5)
    conv = LayerSpec("conv", 1, 16, kernel_size=3, activation="hard_tanh",
                     requant_shift=5)

    # discriminative matched filters: mean-subtracted conv features of
    # each template, scaled into int8
    from .fxp import conv2d_ref
    features = []
    for t in glyph_templates():
        img = quantize(t.reshape(IMAGE_SIZE, IMAGE_SIZE, 1), IMAGE_FRAC_BITS)
        feat = conv2d_ref(img, conv, conv_w)
        features.append(feat.data.reshape(-1).astype(np.float64))
    feats = np.array(features)
    feats -= feats.mean(axis=0)
    fc_w = np.zeros((1, 1, feats.shape[1], N_CLASSES), dtype=np.int8)
    for cls in range(N_CLASSES):
        fc_w[0, 0, :, cls] = np.clip(
            np.round(feats[cls] / 4.0), -128, 127).astype(np.int8)
    fc = LayerSpec("fc", feats.shape[1], N_CLASSES, activation="none",
                   requant_shift=9)
    return Network("glyph-classifier",
                   [conv, fc],
                   [conv_w, FxpTensor(fc_w, 5)])


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray   # (n, 8, 8) int8 at IMAGE_FRAC_BITS
    labels: np.ndarray   # (n,) int
    seed: int

    def __len__(self) -> int:
        return len(self.labels)


def generate_dataset(n: int, seed: int, noise_sigma: float = 0.5) -> Dataset:
    """Seeded synthetic samples: templates cycled over classes and
    perturbed with gaussian pixel noise before quantization (the default
    sigma puts the shipped classifier a little under its template
    ceiling, so fault damage registers at every injection rate)."""
    rng = Rng(seed)
    templates = glyph_templates()
    images = np.empty((n, IMAGE_SIZE, IMAGE_SIZE), dtype=np.int8)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        cls = i % N_CLASSES
        noise = np.array([rng.gauss() for _ in range(templates[cls].size)])
        img = templates[cls] + noise_sigma * noise.reshape(IMAGE_SIZE, IMAGE_SIZE)
        images[i] = quantize(img, IMAGE_FRAC_BITS).data
        labels[i] = cls
    return Dataset(images, labels, seed)


def classify_reference(net: Network, image: np.ndarray) -> int:
    """Fault-free prediction through the reference engine."""
    x = FxpTensor(image.reshape(IMAGE_SIZE, IMAGE_SIZE, 1), IMAGE_FRAC_BITS)
    logits = forward(net, x)
    return int(np.argmax(logits.data.reshape(-1)))


def classify_on_array(net: Network, image: np.ndarray,
                      cfg: array_sim.ArrayConfig, faults,
                      hca: HcaConfig | None = None) -> int:
    x = FxpTensor(image.reshape(IMAGE_SIZE, IMAGE_SIZE, 1), IMAGE_FRAC_BITS)
    for spec, w, b in zip(net.layers, net.weights, net.biases):
        x, _ = array_sim.simulate_layer(x, w, spec, cfg, hca=hca,
                                        faults=faults, bias=b)
    return int(np.argmax(x.data.reshape(-1)))


def dataset_accuracy(net: Network, dataset: Dataset,
                     cfg: array_sim.ArrayConfig, faults,
                     hca: HcaConfig | None = None) -> float:
    hits = 0
    for image, label in zip(dataset.images, dataset.labels):
        hits += classify_on_array(net, image, cfg, faults, hca) == int(label)
    return hits / len(dataset)


def load_image_dataset(path) -> Dataset:
    """Optional external dataset: an .npz with `images` (n, 8, 8) in
    [-1, 1] and integer `labels` (0-9); quantized on load."""
    archive = np.load(path)
    images = quantize(np.asarray(archive["images"], dtype=np.float64),
                      IMAGE_FRAC_BITS).data
    labels = np.asarray(archive["labels"], dtype=np.int64)
    if images.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE) or len(labels) != len(images):
        raise ValueError("dataset must be (n, 8, 8) images with n labels")
    return Dataset(images, labels, seed=-1)


def accuracy_under_faults(pe_rate: float, n_configs: int, dataset: Dataset,
                          cfg: array_sim.ArrayConfig, rng: Rng,
                          net: Network | None = None,
                          hca: HcaConfig | None = None) -> list[float]:
    """Accuracy per sampled fault configuration (the bit-flip accuracy
    experiment): n_configs random-model FaultSets at pe_rate, classifier
    run through the array simulator for every dataset sample."""
    net = net or build_classifier()
    accuracies = []
    for c in range(n_configs):
        faults = sample_random_faults((cfg.rows, cfg.cols), pe_rate,
                                      rng.spawn("faultcfg", c))
        accuracies.append(dataset_accuracy(net, dataset, cfg, faults, hca))
    return accuracies
