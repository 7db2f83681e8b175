"""Desk-scale lab for class-aware adversarial domain adaptation.

Trains a feature extractor, classifier, and class-aware (2K-channel)
domain discriminator on synthetic two-domain classification problems, and
quantifies class-level feature alignment with the class center distance.
"""

from .autodiff import Adam, SgdMomentum, Tensor, leaky_relu, matmul, poly_lr, softmax_t
from .datagen import Dataset, ShiftSpec, apply_shift, gen_gaussian_domains, load_csv_dataset
from .encodings import (binary_encoding, domain_encoding, hard_knowledge,
                        soft_knowledge)
from .losses import (binary_adv_loss, binary_disc_loss, class_adv_loss,
                     class_disc_loss, distill_loss, task_loss)
from .analysis import CcdReport, ccd, class_centers, dump_features
from .nets import (ModelBundle, build_bundle, classify, discriminate,
                   feature_extract, init_params, load_checkpoint, save_checkpoint)
from .trainer import (RunReport, TrainConfig, adapt, evaluate, pretrain_source,
                      run_experiment, self_distill)

__version__ = "0.1.0"
