"""Semi-supervised contrastive pre-training with SuNCEt + NT-Xent at desk scale."""

__version__ = "0.1.0"
