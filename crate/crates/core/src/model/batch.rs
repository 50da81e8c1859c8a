use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A mini-batch of forecasting windows.
///
/// `dec_in` is the last `label_len` observed steps followed by `horizon`
/// placeholder steps whose values are zero. Marks are calendar/tick
/// features aligned with `enc_in` and `dec_in`; they are only read by
/// temporal embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastBatch {
    /// `[B, lookback, in_channels]`
    pub enc_in: Tensor,
    /// `[B, label_len + horizon, in_channels]`
    pub dec_in: Tensor,
    /// `[B, horizon, out_channels]`
    pub target: Tensor,
    /// Observed target channel(s) over the lookback, `[B, lookback, out_channels]`.
    pub past_target: Tensor,
    pub enc_mark: Option<Tensor>,
    pub dec_mark: Option<Tensor>,
}

impl ForecastBatch {
    pub fn batch_size(&self) -> usize {
        self.enc_in.dims()[0]
    }

    pub fn lookback(&self) -> usize {
        self.enc_in.dims()[1]
    }

    pub fn horizon(&self) -> usize {
        self.target.dims()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let (e, d, t, p) = (
            self.enc_in.dims(),
            self.dec_in.dims(),
            self.target.dims(),
            self.past_target.dims(),
        );
        let ok = e.len() == 3
            && d.len() == 3
            && t.len() == 3
            && p.len() == 3
            && e[0] == d[0]
            && e[0] == t[0]
            && e[0] == p[0]
            && e[2] == d[2]
            && p[1] == e[1]
            && p[2] == t[2]
            && d[1] >= t[1];
        if !ok {
            return Err(Error::Contract(format!(
                "inconsistent batch: enc_in {e:?}, dec_in {d:?}, target {t:?}, past_target {p:?}"
            )));
        }
        for (mark, base) in [(&self.enc_mark, e), (&self.dec_mark, d)] {
            if let Some(m) = mark {
                if m.dims().len() != 3 || m.dims()[..2] != base[..2] {
                    return Err(Error::shape("batch marks", m.dims(), base));
                }
            }
        }
        Ok(())
    }
}
