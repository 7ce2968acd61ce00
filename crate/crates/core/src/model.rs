//! The full set of trainable networks for both stages and their optimizer
//! state.
//!
//! Network parameter prefixes:
//!
//! | role                         | two domains              | weight sharing |
//! |------------------------------|--------------------------|----------------|
//! | shared encoder               | `sh_enc_x`, `sh_enc_y`   | `sh_enc`       |
//! | shared global / local scorer | `sh_glob_*`, `sh_loc_*`  | `sh_glob`, `sh_loc` |
//! | exclusive encoder            | `ex_enc_x`, `ex_enc_y`   | `ex_enc`       |
//! | exclusive global / local     | `ex_glob_*`, `ex_loc_*`  | `ex_glob`, `ex_loc` |
//! | discriminator                | `disc_x`, `disc_y`       | `disc`         |

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, ParamStore};
use crate::networks::{Discriminator, Encoder, EncoderConfig, GlobalStatNet, LocalStatNet};
use crate::objectives::{ExclusiveStageNets, SharedStageNets};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub shared_dim: usize,
    pub exclusive_dim: usize,
}

impl ModelDims {
    pub fn image_shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn shared_encoder(&self) -> EncoderConfig {
        EncoderConfig::new(self.height, self.width, self.channels, self.shared_dim)
    }

    pub fn exclusive_encoder(&self) -> EncoderConfig {
        EncoderConfig::new(self.height, self.width, self.channels, self.exclusive_dim)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Shared,
    Exclusive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    pub sh_enc_x: Encoder,
    pub sh_enc_y: Encoder,
    pub sh_glob_x: GlobalStatNet,
    pub sh_glob_y: GlobalStatNet,
    pub sh_loc_x: LocalStatNet,
    pub sh_loc_y: LocalStatNet,
    pub ex_enc_x: Encoder,
    pub ex_enc_y: Encoder,
    pub ex_glob_x: GlobalStatNet,
    pub ex_glob_y: GlobalStatNet,
    pub ex_loc_x: LocalStatNet,
    pub ex_loc_y: LocalStatNet,
    pub disc_x: Discriminator,
    pub disc_y: Discriminator,
}

impl Networks {
    pub fn new(dims: &ModelDims, weight_sharing: bool) -> Self {
        let name = |base: &str, side: &str| {
            if weight_sharing {
                base.to_string()
            } else {
                format!("{base}_{side}")
            }
        };
        let sh_cfg = dims.shared_encoder();
        let ex_cfg = dims.exclusive_encoder();
        let sh_fm = sh_cfg.feature_shape();
        let ex_fm = ex_cfg.feature_shape();
        let r_dim = dims.shared_dim + dims.exclusive_dim;
        Networks {
            sh_enc_x: Encoder::new(name("sh_enc", "x"), sh_cfg.clone()),
            sh_enc_y: Encoder::new(name("sh_enc", "y"), sh_cfg),
            sh_glob_x: GlobalStatNet::new(name("sh_glob", "x"), sh_fm, dims.shared_dim),
            sh_glob_y: GlobalStatNet::new(name("sh_glob", "y"), sh_fm, dims.shared_dim),
            sh_loc_x: LocalStatNet::new(name("sh_loc", "x"), sh_fm, dims.shared_dim),
            sh_loc_y: LocalStatNet::new(name("sh_loc", "y"), sh_fm, dims.shared_dim),
            ex_enc_x: Encoder::new(name("ex_enc", "x"), ex_cfg.clone()),
            ex_enc_y: Encoder::new(name("ex_enc", "y"), ex_cfg),
            ex_glob_x: GlobalStatNet::new(name("ex_glob", "x"), ex_fm, r_dim),
            ex_glob_y: GlobalStatNet::new(name("ex_glob", "y"), ex_fm, r_dim),
            ex_loc_x: LocalStatNet::new(name("ex_loc", "x"), ex_fm, r_dim),
            ex_loc_y: LocalStatNet::new(name("ex_loc", "y"), ex_fm, r_dim),
            disc_x: Discriminator::new(name("disc", "x"), dims.shared_dim, dims.exclusive_dim),
            disc_y: Discriminator::new(name("disc", "y"), dims.shared_dim, dims.exclusive_dim),
        }
    }

    pub fn shared_stage(&self) -> SharedStageNets<'_> {
        SharedStageNets {
            enc_x: &self.sh_enc_x,
            enc_y: &self.sh_enc_y,
            global_x: &self.sh_glob_x,
            global_y: &self.sh_glob_y,
            local_x: &self.sh_loc_x,
            local_y: &self.sh_loc_y,
        }
    }

    pub fn exclusive_stage(&self) -> ExclusiveStageNets<'_> {
        ExclusiveStageNets {
            shared_x: &self.sh_enc_x,
            shared_y: &self.sh_enc_y,
            enc_x: &self.ex_enc_x,
            enc_y: &self.ex_enc_y,
            global_x: &self.ex_glob_x,
            global_y: &self.ex_glob_y,
            local_x: &self.ex_loc_x,
            local_y: &self.ex_loc_y,
            disc_x: &self.disc_x,
            disc_y: &self.disc_y,
        }
    }

    pub fn shared_encoders(&self) -> BTreeSet<String> {
        [&self.sh_enc_x, &self.sh_enc_y].iter().map(|e| e.prefix.clone()).collect()
    }

    /// Every network trained in stage 1.
    pub fn stage1(&self) -> BTreeSet<String> {
        let mut s = self.shared_encoders();
        s.extend([&self.sh_glob_x.prefix, &self.sh_glob_y.prefix].map(String::clone));
        s.extend([&self.sh_loc_x.prefix, &self.sh_loc_y.prefix].map(String::clone));
        s
    }

    /// Exclusive encoders and statistics networks (the maximizing side of stage 2).
    pub fn stage2_encoder_side(&self) -> BTreeSet<String> {
        [
            &self.ex_enc_x.prefix,
            &self.ex_enc_y.prefix,
            &self.ex_glob_x.prefix,
            &self.ex_glob_y.prefix,
            &self.ex_loc_x.prefix,
            &self.ex_loc_y.prefix,
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    pub fn discriminators(&self) -> BTreeSet<String> {
        [&self.disc_x.prefix, &self.disc_y.prefix].iter().map(|s| s.to_string()).collect()
    }

    /// Every network trained in stage 2.
    pub fn stage2(&self) -> BTreeSet<String> {
        let mut s = self.stage2_encoder_side();
        s.extend(self.discriminators());
        s
    }

    fn init_stage1(&self, store: &mut ParamStore, seed: u64) {
        for e in [&self.sh_enc_x, &self.sh_enc_y] {
            e.init(store, seed);
        }
        for g in [&self.sh_glob_x, &self.sh_glob_y] {
            g.init(store, seed);
        }
        for l in [&self.sh_loc_x, &self.sh_loc_y] {
            l.init(store, seed);
        }
    }

    fn init_stage2(&self, store: &mut ParamStore, seed: u64) {
        for e in [&self.ex_enc_x, &self.ex_enc_y] {
            e.init(store, seed);
        }
        for g in [&self.ex_glob_x, &self.ex_glob_y] {
            g.init(store, seed);
        }
        for l in [&self.ex_loc_x, &self.ex_loc_y] {
            l.init(store, seed);
        }
        for d in [&self.disc_x, &self.disc_y] {
            d.init(store, seed);
        }
    }
}

/// All parameters and optimizer state of a (possibly partially) trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub dims: ModelDims,
    pub weight_sharing: bool,
    pub seed: u64,
    pub stage: Stage,
    pub nets: Networks,
    pub params: ParamStore,
    /// Optimizer over every stage-1 network.
    pub opt_shared: Adam,
    /// Optimizer over the stage-2 encoders and statistics networks.
    pub opt_exclusive: Adam,
    /// Optimizer over the discriminators.
    pub opt_disc: Adam,
}

impl ModelBundle {
    /// A fresh stage-1 model. Initial values depend only on `(seed, name)`.
    pub fn new(dims: ModelDims, weight_sharing: bool, seed: u64, lr: f32) -> Self {
        let nets = Networks::new(&dims, weight_sharing);
        let mut params = ParamStore::new();
        nets.init_stage1(&mut params, seed);
        let opt = Adam::new(AdamConfig::with_lr(lr));
        ModelBundle {
            dims,
            weight_sharing,
            seed,
            stage: Stage::Shared,
            nets,
            params,
            opt_shared: opt.clone(),
            opt_exclusive: opt.clone(),
            opt_disc: opt,
        }
    }

    /// Switches to stage 2: freezes the shared encoders and initializes the
    /// stage-2 networks. A no-op if already in stage 2.
    pub fn enter_exclusive_stage(&mut self) {
        if self.stage == Stage::Exclusive {
            return;
        }
        self.nets.init_stage2(&mut self.params, self.seed);
        self.freeze_shared();
        self.stage = Stage::Exclusive;
    }

    pub(crate) fn freeze_shared(&mut self) {
        for p in self.nets.shared_encoders() {
            self.params.freeze(&p);
        }
    }

    /// Checksum over the shared encoders' parameters.
    pub fn shared_checksum(&self) -> String {
        self.nets
            .shared_encoders()
            .iter()
            .map(|p| self.params.checksum(p))
            .collect::<Vec<_>>()
            .join(":")
    }

    /// Networks that receive updates in the current stage.
    pub fn trainable_networks(&self) -> BTreeSet<String> {
        match self.stage {
            Stage::Shared => self.nets.stage1(),
            Stage::Exclusive => self.nets.stage2(),
        }
    }
}
