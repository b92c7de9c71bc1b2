//! Closed-form parameter and multiply-accumulate counts, derived from the
//! configuration alone (no model is built).

use lpca_tensor::layers::UpsampleMode;

use super::config::{ModelConfig, STAGES};

/// Cost of a single layer for one (1, ·, H, W) forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub macs: u64,
}

/// Weights Cout·Cin/g·kH·kW (+ Cout bias); MACs the same product times Hout·Wout.
pub fn conv_cost(cin: usize, cout: usize, k: (usize, usize), groups: usize, bias: bool, out_hw: (usize, usize)) -> (u64, u64) {
    let w = (cout * (cin / groups) * k.0 * k.1) as u64;
    (w + if bias { cout as u64 } else { 0 }, w * (out_hw.0 * out_hw.1) as u64)
}

/// Din·Dout + Dout parameters; L·Din·Dout MACs.
pub fn linear_cost(din: usize, dout: usize, tokens: usize) -> (u64, u64) {
    ((din * dout + dout) as u64, (tokens * din * dout) as u64)
}

/// γ and β.
pub fn batchnorm_cost(c: usize) -> (u64, u64) {
    (2 * c as u64, 0)
}

/// QKᵀ and PV products: L²·C each.
pub fn attention_cost(tokens: usize, c: usize) -> (u64, u64) {
    (0, (2 * tokens * tokens * c) as u64)
}

/// Cin·Cout·k² (+ Cout bias); MACs Cin·Cout·k²·Hin·Win.
pub fn transposed_conv_cost(cin: usize, cout: usize, k: usize, in_hw: (usize, usize)) -> (u64, u64) {
    let w = (cin * cout * k * k) as u64;
    (w + cout as u64, w * (in_hw.0 * in_hw.1) as u64)
}

#[derive(Default)]
struct Ledger(Vec<LayerCost>);

impl Ledger {
    fn push(&mut self, name: impl Into<String>, (params, macs): (u64, u64)) {
        self.0.push(LayerCost {
            name: name.into(),
            params,
            macs,
        });
    }

    fn conv_bn(&mut self, name: &str, cin: usize, cout: usize, k: usize, groups: usize, out_hw: (usize, usize)) {
        self.push(format!("{name}.conv"), conv_cost(cin, cout, (k, k), groups, false, out_hw));
        self.push(format!("{name}.bn"), batchnorm_cost(cout));
    }
}

fn half((h, w): (usize, usize), s: usize) -> (usize, usize) {
    (h / s, w / s)
}

/// Every layer of the network with its parameter and MAC count.
pub fn layer_costs(cfg: &ModelConfig) -> Vec<LayerCost> {
    let mut l = Ledger::default();
    let layout = cfg.backbone();

    let mut hw = half(cfg.input_hw, 2);
    l.conv_bn("backbone.stem", 3, layout.stem, 3, 1, hw);
    let mut cin = layout.stem;
    let mut b = 0;
    for group in &layout.groups {
        for i in 0..group.repeats {
            let stride = if i == 0 { group.stride } else { 1 };
            let hidden = cin * group.expand;
            let name = format!("backbone.blocks.{b}");
            if group.expand != 1 {
                l.conv_bn(&format!("{name}.expand"), cin, hidden, 1, 1, hw);
            }
            hw = half(hw, stride);
            l.conv_bn(&format!("{name}.depthwise"), hidden, hidden, 3, hidden, hw);
            l.conv_bn(&format!("{name}.project"), hidden, group.channels, 1, 1, hw);
            cin = group.channels;
            b += 1;
        }
    }

    let d = cfg.depth_channels;
    let mut cin = 1;
    for (i, &c) in d.iter().enumerate() {
        let hw = cfg.stage_hw(i);
        let name = format!("lpm.stages.{i}");
        if i == 0 {
            l.push(format!("{name}.proj"), conv_cost(1, c, (4, 4), 1, true, hw));
            cin = c;
        }
        l.conv_bn(&format!("{name}.layers.0"), cin, c, 3, 1, hw);
        l.conv_bn(&format!("{name}.layers.1"), c, c, 3, 1, hw);
        cin = c;
    }

    let (cr, cc) = (cfg.rgb_channels(), cfg.cam_channels());
    for i in 0..STAGES {
        let hw = cfg.stage_hw(i);
        let tokens = hw.0 * hw.1;
        let name = format!("fusion.{i}");
        if cfg.use_cam {
            l.push(format!("{name}.cam.query"), linear_cost(cr[i], cc[i], tokens));
            l.push(format!("{name}.cam.key"), linear_cost(d[i], cc[i], tokens));
            l.push(format!("{name}.cam.value"), linear_cost(d[i], cc[i], tokens));
            l.push(format!("{name}.cam.attention"), attention_cost(tokens, cc[i]));
            l.push(format!("{name}.cam.output"), linear_cost(cc[i], cc[i], tokens));
        } else {
            l.push(format!("{name}.concat"), conv_cost(cr[i] + d[i], cc[i], (1, 1), 1, true, hw));
        }
        if cfg.sfe_stage_mask[i] {
            let c = cc[i];
            let s = format!("sfe.{i}");
            l.push(format!("{s}.conv_in"), conv_cost(c, c, (1, 1), 1, true, hw));
            for bn in ["bn_in", "bn_x", "bn_y", "bn_out"] {
                l.push(format!("{s}.{bn}"), batchnorm_cost(c));
            }
            l.push(format!("{s}.conv_x"), conv_cost(c, c, (1, 3), 1, true, hw));
            l.push(format!("{s}.conv_y"), conv_cost(c, c, (3, 1), 1, true, hw));
            l.push(format!("{s}.conv_out"), conv_cost(c, c, (1, 1), 1, true, hw));
            l.push(format!("merge.{i}"), conv_cost(2 * c, c, (1, 1), 1, true, hw));
        }
    }
    for i in 0..STAGES {
        let out = half(cfg.stage_hw(i), 2);
        l.push(format!("down.{i}"), conv_cost(cc[i], cc[i], (4, 4), 1, true, out));
        if i + 1 < STAGES {
            l.push(format!("align.{i}"), conv_cost(cc[i], cc[i + 1], (1, 1), 1, true, out));
        }
    }

    let c = cc[STAGES - 1];
    let hw = cfg.down_hw();
    let r = cfg.upscale();
    l.push("decoder.bn", batchnorm_cost(c));
    match cfg.upsample_mode {
        UpsampleMode::PixelShuffle => l.push("decoder.head.conv", conv_cost(c, r * r, (1, 1), 1, true, hw)),
        UpsampleMode::StagedPixelShuffle => {
            let steps = r.trailing_zeros() as usize / 2;
            let (mut cin, mut hw) = (c, hw);
            for i in 0..steps {
                let cout = if i + 1 == steps { 1 } else { (cin / 4).max(4) };
                let k = if i == 0 { 1 } else { 3 };
                l.push(format!("decoder.head.stages.{i}"), conv_cost(cin, 16 * cout, (k, k), 1, true, hw));
                cin = cout;
                hw = (hw.0 * 4, hw.1 * 4);
            }
        }
        UpsampleMode::Nearest | UpsampleMode::Bilinear => {
            l.push("decoder.head.conv", conv_cost(c, 1, (1, 1), 1, true, hw))
        }
        UpsampleMode::TransposedConv => l.push("decoder.head.deconv", transposed_conv_cost(c, 1, r, hw)),
        UpsampleMode::PatchExpand => {
            let (mut cin, mut hw) = (c, hw);
            for i in 0..r.trailing_zeros() {
                let cout = (cin / 2).max(1);
                l.push(format!("decoder.head.expand.{i}"), conv_cost(cin, 4 * cout, (1, 1), 1, true, hw));
                cin = cout;
                hw = (hw.0 * 2, hw.1 * 2);
            }
            l.push("decoder.head.conv", conv_cost(cin, 1, (1, 1), 1, true, hw));
        }
    }
    l.0
}

/// Total (parameters, multiply-accumulates) for one forward pass at batch 1.
pub fn count_params_flops(cfg: &ModelConfig) -> (u64, u64) {
    layer_costs(cfg)
        .iter()
        .fold((0, 0), |(p, m), c| (p + c.params, m + c.macs))
}

/// Figures published for the reference configuration (parameters, MACs).
pub const PUBLISHED_PARAMS: f64 = 9.90e6;
pub const PUBLISHED_MACS: f64 = 2.50e9;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_layer_formulas() {
        assert_eq!(conv_cost(64, 64, (3, 3), 1, true, (1, 1)).0, 36_928);
        assert_eq!(conv_cost(128, 64, (1, 1), 1, false, (40, 40)).1, 64 * 128 * 1600);
        assert_eq!(linear_cost(8, 4, 10), (36, 320));
        assert_eq!(attention_cost(4, 8).1, 2 * 16 * 8);
        assert_eq!(transposed_conv_cost(4, 1, 4, (2, 3)), (65, 64 * 6));
    }
}
