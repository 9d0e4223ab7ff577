"""The full few-shot dense prediction model.

``predict`` composes the pipeline: encode support and query images under the
task's adaptation parameters, encode support labels, re-weight image feature
levels with the task's row-stochastic mixing matrix, match each level from
query tokens to support label tokens, assemble the feature pyramid, and
decode with the task head.
"""

import torch
from torch import nn

from .config import ModelConfig
from .encoder import ImageEncoder
from .errors import InputError, ShapeError
from .label_codec import ConvDecoder, LabelEncoder, PyramidAssembler
from .matching import MatchingStack, reweight_features
from .seeding import torch_generator


class FewShotDenseModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.image_encoder = ImageEncoder(config)
        self.label_encoder = LabelEncoder(config)
        self.matching = MatchingStack(config)
        self.assembler = PyramidAssembler(config)
        self.decoder = ConvDecoder(config)

    def new_head(self, seed=None) -> nn.Conv2d:
        """Fresh 1x1 output head (the task-group-specific decoder piece)."""
        head = nn.Conv2d(self.config.decoder_dim, 1, 1)
        if seed is not None:
            gen = torch_generator(0, *seed) if isinstance(seed, tuple) else torch_generator(seed)
            with torch.no_grad():
                head.weight.copy_(
                    torch.randn(head.weight.shape, generator=gen) * 0.02
                )
                head.bias.zero_()
        return head

    # -- encoding ------------------------------------------------------------

    def encode_images(self, x, params=None):
        """Image(s) -> L levels of modality-0 token features."""
        biases = params.biases if params is not None else None
        tables = params.pos_bias.tables if params is not None else None
        return self.image_encoder(x, biases=biases, pos_tables=tables)

    def encode_labels(self, y):
        return self.label_encoder(y)

    # -- end-to-end ------------------------------------------------------------

    def encode_support(self, support, params):
        """Precompute support token features for repeated queries.

        Returns raw (un-mixed) image levels and label levels; the level
        mixing happens at query time against the task's current matrix.
        """
        if hasattr(support, "support"):
            support = support.support
        if len(support) == 0:
            raise InputError("support set must not be empty")
        xs = torch.stack([pair[0] for pair in support])
        ys = torch.stack([pair[1] for pair in support])
        img_levels = self.encode_images(xs, params)  # L x [N, M, d]
        lab_levels = self.encode_labels(ys)
        return {
            "image_levels": [lvl.reshape(-1, lvl.shape[-1]) for lvl in img_levels],
            "label_levels": [lvl.reshape(-1, lvl.shape[-1]) for lvl in lab_levels],
            "shape": tuple(xs.shape[1:]),
        }

    def predict_cached(self, query, cache, params):
        """predict() against precomputed support features."""
        single = query.dim() == 4
        if single:
            query = query.unsqueeze(0)
        if tuple(query.shape[1:]) != cache["shape"]:
            raise ShapeError(
                f"query {tuple(query.shape[1:])} does not match cached support "
                f"{cache['shape']}"
            )
        Q, I, _, H, W = query.shape
        lam = params.lambda_matrix()
        qry_img = reweight_features(self.encode_images(query, params), lam)
        sup_img = reweight_features(cache["image_levels"], lam)
        matched = self.matching(qry_img, sup_img, cache["label_levels"])
        pyramid = self.assembler(matched, (H, W))
        out = self.decoder(pyramid, params.head, (H, W))
        return out.squeeze(0) if single else out

    def predict(self, query, support, params, return_attention=False):
        """Predict dense map(s) for query image(s) from a support set.

        query: [I, 3, H, W] or [Q, I, 3, H, W]
        support: list of (image, label) pairs, or an Episode-like with
            .support
        params: TaskParams
        Returns [1, H, W] (single query) or [Q, 1, H, W].
        """
        if hasattr(support, "support"):
            support = support.support
        if len(support) == 0:
            raise InputError("support set must not be empty")
        single = query.dim() == 4
        if single:
            query = query.unsqueeze(0)
        Q, I, _, H, W = query.shape
        xs = torch.stack([pair[0] for pair in support])  # [N, I, 3, H, W]
        ys = torch.stack([pair[1] for pair in support])  # [N, 1, H, W]
        if xs.shape[1:] != query.shape[1:]:
            raise ShapeError(
                f"support images {tuple(xs.shape[1:])} do not match query "
                f"{tuple(query.shape[1:])}"
            )
        N = xs.shape[0]

        # One batched pass over supports and queries together.
        both = torch.cat([xs, query], dim=0)
        img_levels = self.encode_images(both, params)  # L x [N+Q, M, d]
        lam = params.lambda_matrix()
        img_levels = reweight_features(img_levels, lam)
        sup_img = [lvl[:N].reshape(-1, lvl.shape[-1]) for lvl in img_levels]
        qry_img = [lvl[N:] for lvl in img_levels]
        lab_levels = self.encode_labels(ys)  # L x [N, M, d]
        sup_lab = [lvl.reshape(-1, lvl.shape[-1]) for lvl in lab_levels]

        if return_attention:
            matched, weights = self.matching(
                qry_img, sup_img, sup_lab, return_weights=True
            )
        else:
            matched = self.matching(qry_img, sup_img, sup_lab)
        pyramid = self.assembler(matched, (H, W))
        out = self.decoder(pyramid, params.head, (H, W))
        if single:
            out = out.squeeze(0)
            if return_attention:
                weights = [w.squeeze(0) for w in weights]
        if return_attention:
            return out, weights
        return out
