"""Full generator assembly: encoder -> latents -> dual branches -> Gaussians."""

from __future__ import annotations

import numpy as np

from .appearance import (GaussianAttributes, GaussianDecoder, LocalPointNet,
                         StyleUNet, interp_triplane, project_to_triplane)
from .autodiff import Module, Tensor, no_grad, ops
from .config import ModelConfig
from .drl import (Adapter, ImageBackbone, LatentState, LightEncoder,
                  PosteriorGaussian, PosteriorHeads, reparameterize)
from .geometry import FoldingDecoder
from .splat.camera import Camera
from .splat.gaussians import GaussianTensors
from .splat.project import cov_from_factors, project_gaussian
from .splat.rasterize import composite
from .splat.sh import sh_eval


class DisGaussModel(Module):
    """Single-view image -> disentangled latents -> 3D Gaussian scene."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng([seed, 0x3D15])
        self.backbone = ImageBackbone(rng, image_size=cfg.image_size,
                                      out_ch=cfg.backbone_ch)
        feat_dim = cfg.backbone_ch * (cfg.image_size // 8) ** 2
        self.posteriors = PosteriorHeads(rng, feat_dim, d_apr=cfg.latent_apr,
                                         d_pcd=cfg.latent_pcd)
        self.adapter_apr = Adapter(rng, cfg.latent_apr, cond_dim=cfg.cond_dim)
        self.adapter_pcd = Adapter(rng, cfg.latent_pcd, cond_dim=cfg.cond_dim)
        self.folding = FoldingDecoder(cfg.cond_dim, rng, n_points=cfg.n_points,
                                      hidden=cfg.fold_hidden)
        self.pointnet = LocalPointNet(rng, feat_dim=cfg.pointnet_feat,
                                      grid_res=cfg.triplane_res)
        self.unet = StyleUNet(cfg.triplane_ch, cfg.cond_dim, rng,
                              res=cfg.triplane_res)
        self.pre_plane = None  # pointnet feat dim == triplane channels by default
        if cfg.pointnet_feat != cfg.triplane_ch:
            raise ValueError("pointnet_feat must equal triplane_ch")
        self.decoder = GaussianDecoder(3 * cfg.triplane_ch, rng,
                                       res=cfg.triplane_res,
                                       sh_degree=cfg.sh_degree,
                                       s_max=cfg.scale_max,
                                       hidden=cfg.decoder_hidden)
        self.light_enc = LightEncoder(rng, d=cfg.latent_apr,
                                      image_size=cfg.image_size)

    # -- encoding -------------------------------------------------------
    def encode(self, images: Tensor) -> tuple[PosteriorGaussian, PosteriorGaussian]:
        """images (B,3,H,W) -> (posterior_apr, posterior_pcd)."""
        return self.posteriors(self.backbone(images))

    def latents(self, images: Tensor, rng: np.random.Generator | None
                ) -> LatentState:
        """Encode and sample (rng None: use posterior means, deterministic)."""
        post_apr, post_pcd = self.encode(images)
        if rng is None:
            z_apr, z_pcd = post_apr.mean, post_pcd.mean
        else:
            z_apr = reparameterize(post_apr, rng)
            z_pcd = reparameterize(post_pcd, rng)
        return LatentState(posterior_apr=post_apr, posterior_pcd=post_pcd,
                           z_apr=z_apr, z_pcd=z_pcd,
                           c_apr=self.adapter_apr(z_apr),
                           c_pcd=self.adapter_pcd(z_pcd))

    # -- generation -----------------------------------------------------
    def fold_points(self, c_pcd: Tensor) -> Tensor:
        return self.folding(c_pcd)

    def appearance(self, points: Tensor, c_apr: Tensor) -> GaussianAttributes:
        feats = self.pointnet(points)
        tri = project_to_triplane(feats, points, self.cfg.triplane_res)
        tri = self.unet(tri, c_apr)
        f_p = interp_triplane(tri, points)
        return self.decoder(f_p, points)

    def decode(self, z_apr: Tensor, z_pcd: Tensor
               ) -> tuple[Tensor, GaussianAttributes]:
        c_apr = self.adapter_apr(z_apr)
        c_pcd = self.adapter_pcd(z_pcd)
        points = self.fold_points(c_pcd)
        return points, self.appearance(points, c_apr)

    def attrs_to_tensors(self, attrs: GaussianAttributes) -> GaussianTensors:
        return GaussianTensors(positions=attrs.positions,
                               rotations=attrs.rotations,
                               scales=attrs.scales,
                               sh_coeffs=attrs.sh_coeffs,
                               opacities=attrs.opacities)

    # -- rendering ------------------------------------------------------
    def render_views(self, attrs: GaussianAttributes,
                     cameras: list[list[Camera]],
                     background=(0.0, 0.0, 0.0)) -> Tensor:
        """Render batched attributes from per-sample camera lists.

        attrs fields are (B,N,...); cameras is B lists of V cameras (all the
        same image size). Returns colors (B,V,H,W,3); the whole batch is one
        compositing tape node.
        """
        B, N = attrs.opacities.shape
        V = len(cameras[0])
        dt = attrs.positions.dtype
        h, w = cameras[0][0].height, cameras[0][0].width

        cov3d = cov_from_factors(attrs.rotations, attrs.scales)  # (B,N,3,3)

        rot = np.stack([[c.rotation for c in cams] for cams in cameras])   # (B,V,3,3)
        trn = np.stack([[c.translation for c in cams] for cams in cameras])
        pos_w = np.stack([[c.position for c in cams] for cams in cameras])
        fx = np.stack([[c.fx for c in cams] for cams in cameras])
        fy = np.stack([[c.fy for c in cams] for cams in cameras])
        cx = np.stack([[c.cx for c in cams] for cams in cameras])
        cy = np.stack([[c.cy for c in cams] for cams in cameras])

        Wt = Tensor(rot.astype(dt))                         # (B,V,3,3)
        pos = ops.reshape(attrs.positions, (B, 1, N, 3))
        t = ops.add(ops.matmul(pos, ops.swapaxes(Wt, -1, -2)),
                    Tensor(trn.astype(dt)).reshape(B, V, 1, 3))
        tx, ty, tz_raw = t[..., 0], t[..., 1], t[..., 2]
        valid = tz_raw.data > 0.01
        tz = ops.where(valid, tz_raw, ops.const_like(0.01, t))
        inv_z = ops.div(ops.const_like(1.0, t), tz)
        fxt = Tensor(fx.astype(dt)).reshape(B, V, 1)
        fyt = Tensor(fy.astype(dt)).reshape(B, V, 1)
        mean_x = ops.add(ops.mul(fxt, ops.mul(tx, inv_z)),
                         Tensor(cx.astype(dt)).reshape(B, V, 1))
        mean_y = ops.add(ops.mul(fyt, ops.mul(ty, inv_z)),
                         Tensor(cy.astype(dt)).reshape(B, V, 1))
        mean2d = ops.stack([mean_x, mean_y], axis=-1)        # (B,V,N,2)

        zero = ops.broadcast_to(ops.const_like(0.0, t), tx.shape)
        inv_z2 = ops.mul(inv_z, inv_z)
        J = ops.stack([
            ops.stack([ops.mul(fxt, inv_z), zero,
                       ops.neg(ops.mul(fxt, ops.mul(tx, inv_z2)))], axis=-1),
            ops.stack([zero, ops.mul(fyt, inv_z),
                       ops.neg(ops.mul(fyt, ops.mul(ty, inv_z2)))], axis=-1),
        ], axis=-2)                                           # (B,V,N,2,3)
        Wb = ops.reshape(Wt, (B, V, 1, 3, 3))
        cov_cam = ops.matmul(ops.matmul(Wb, ops.reshape(cov3d, (B, 1, N, 3, 3))),
                             ops.swapaxes(Wb, -1, -2))
        cov2d = ops.matmul(ops.matmul(J, cov_cam), ops.swapaxes(J, -1, -2))
        cov2d = ops.add(cov2d, Tensor((0.3 * np.eye(2)).astype(dt)))

        rel = ops.sub(ops.reshape(attrs.positions, (B, 1, N, 3)),
                      Tensor(pos_w.astype(dt)).reshape(B, V, 1, 3))
        nrm = ops.sqrt(ops.add(ops.tsum(ops.mul(rel, rel), axis=-1, keepdims=True),
                               ops.const_like(1e-12, rel)))
        dirs = ops.div(rel, nrm)
        sh = ops.broadcast_to(ops.reshape(attrs.sh_coeffs,
                                          (B, 1, N) + attrs.sh_coeffs.shape[2:]),
                              (B, V, N) + attrs.sh_coeffs.shape[2:])
        rgb = sh_eval(sh, dirs, degree=self.cfg.sh_degree)

        # flatten (B,V) -> M images for the compositing kernel
        Mimg = B * V
        opac = ops.reshape(ops.broadcast_to(
            ops.reshape(attrs.opacities, (B, 1, N)), (B, V, N)), (Mimg, N))
        col, _, _ = composite(
            ops.reshape(mean2d, (Mimg, N, 2)), ops.reshape(cov2d, (Mimg, N, 2, 2)),
            ops.reshape(rgb, (Mimg, N, 3)), opac,
            tz_raw.data.reshape(Mimg, N), valid.reshape(Mimg, N),
            h, w, np.asarray(background, dtype=dt))
        return ops.reshape(col, (B, V, h, w, 3))

    def render_single(self, z_apr: np.ndarray, z_pcd: np.ndarray,
                      camera: Camera, background=(0.0, 0.0, 0.0)) -> np.ndarray:
        """Deterministic no-grad render of one latent pair (service path)."""
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                za = Tensor(np.asarray(z_apr, dtype=np.float32).reshape(1, -1))
                zp = Tensor(np.asarray(z_pcd, dtype=np.float32).reshape(1, -1))
                _, attrs = self.decode(za, zp)
                img = self.render_views(attrs, [[camera]], background)
                return np.clip(img.data[0, 0], 0.0, 1.0)
        finally:
            self.train(was_training)

    def point_cloud(self, z_pcd: np.ndarray) -> np.ndarray:
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                zp = Tensor(np.asarray(z_pcd, dtype=np.float32).reshape(1, -1))
                return self.fold_points(self.adapter_pcd(zp)).data[0]
        finally:
            self.train(was_training)
