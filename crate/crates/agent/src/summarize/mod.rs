//! Text summaries of raw trajectories and their plots, and the plot renderer.

mod plot;

use serde::{Deserialize, Serialize};
use sindy_core::fmt::sig;
use sindy_core::{Dataset, Trajectory};

use crate::llm::{chat_image, ChatRequest, ImagePayload, LlmError, Transport};

pub use plot::{render_fit_plot, render_plot, PlotConfig};

pub const DEFAULT_MAX_ROWS: usize = 500;
pub const CSV_DIGITS: usize = 6;

pub const DATA_TEMPLATE_VERSION: &str = "data_summary.v1";
pub const IMAGE_TEMPLATE_VERSION: &str = "image_summary.v1";
pub const DATA_TEMPLATE: &str = include_str!("../../templates/data_summary.v1.txt");
pub const IMAGE_TEMPLATE: &str = include_str!("../../templates/image_summary.v1.txt");

/// A produced summary and the template version that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub text: String,
    pub template_version: String,
}

/// Everything known about the system under study. Only the first train
/// trajectory is summarized or plotted.
#[derive(Debug, Clone)]
pub struct SystemObservation {
    pub text: Option<String>,
    pub data: Dataset,
    pub images: Vec<ImagePayload>,
    pub data_summary: Option<Summary>,
    pub image_summary: Option<Summary>,
}

/// Serializable part of a [`SystemObservation`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub text: Option<String>,
    pub data_summary: Option<Summary>,
    pub image_summary: Option<Summary>,
}

impl SystemObservation {
    pub fn new(data: Dataset, text: Option<String>) -> Self {
        Self {
            text,
            data,
            images: Vec::new(),
            data_summary: None,
            image_summary: None,
        }
    }

    pub fn record(&self) -> ObservationRecord {
        ObservationRecord {
            text: self.text.clone(),
            data_summary: self.data_summary.clone(),
            image_summary: self.image_summary.clone(),
        }
    }

    /// Restores previously produced summaries, e.g. on resume.
    pub fn apply(&mut self, record: &ObservationRecord) {
        self.data_summary = record.data_summary.clone();
        self.image_summary = record.image_summary.clone();
    }

    /// Produces the requested summaries of the first train trajectory,
    /// running both calls concurrently. Existing summaries are kept.
    pub fn summarize(
        &mut self,
        transport: &dyn Transport,
        label: &str,
        data: bool,
        image: bool,
    ) -> Result<(), LlmError> {
        let traj = &self.data.train[0];
        let need_data = data && self.data_summary.is_none();
        let need_image = image && self.image_summary.is_none();
        if need_image && self.images.is_empty() {
            self.images.push(render_plot(traj, &PlotConfig::default()));
        }
        let img = self.images.first().cloned();
        let (d, i) = std::thread::scope(|s| {
            let d = need_data.then(|| s.spawn(|| summarize_data(transport, traj, label)));
            let i = need_image.then(|| {
                let img = img.clone().expect("plot rendered");
                let n = traj.dimension();
                s.spawn(move || summarize_image(transport, img, n, label))
            });
            (
                d.map(|h| h.join().expect("summary thread panicked")),
                i.map(|h| h.join().expect("summary thread panicked")),
            )
        });
        if let Some(d) = d {
            self.data_summary = Some(d?);
        }
        if let Some(i) = i {
            self.image_summary = Some(i?);
        }
        Ok(())
    }
}

/// Row indices kept by [`to_csv`]: all rows when `len <= max_rows`, else
/// `i * (len - 1) / (max_rows - 1)` for `i < max_rows`.
pub fn downsample_indices(len: usize, max_rows: usize) -> Vec<usize> {
    let max_rows = max_rows.max(2);
    if len <= max_rows {
        return (0..len).collect();
    }
    (0..max_rows).map(|i| i * (len - 1) / (max_rows - 1)).collect()
}

pub fn csv_header(n: usize) -> String {
    std::iter::once("t".to_string())
        .chain((0..n).map(|j| format!("x{j}")))
        .collect::<Vec<_>>()
        .join(",")
}

/// Data rows of [`to_csv`] without the header.
pub fn csv_rows(traj: &Trajectory, max_rows: usize) -> String {
    let mut out = String::new();
    for k in downsample_indices(traj.len(), max_rows) {
        out.push_str(&sig(traj.times()[k], CSV_DIGITS));
        for v in traj.states().row(k).iter() {
            out.push(',');
            out.push_str(&sig(*v, CSV_DIGITS));
        }
        out.push('\n');
    }
    out
}

/// CSV slice `t,x0,...` with at most `max_rows` rows (`max_rows >= 2`),
/// keeping the first and last samples.
pub fn to_csv(traj: &Trajectory, max_rows: usize) -> String {
    format!("{}\n{}", csv_header(traj.dimension()), csv_rows(traj, max_rows))
}

fn fill_dims(template: &str, n: usize) -> String {
    template
        .replace("{n}", &n.to_string())
        .replace("{s}", if n == 1 { "" } else { "s" })
}

pub fn data_prompt(traj: &Trajectory, max_rows: usize) -> String {
    let n = traj.dimension();
    let xdims = (0..n).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
    let rows = csv_rows(traj, max_rows);
    fill_dims(DATA_TEMPLATE, n)
        .replace("{xdims}", &xdims)
        .replace("{data}\n", &rows)
}

pub fn image_prompt(n: usize) -> String {
    fill_dims(IMAGE_TEMPLATE, n)
}

pub fn summarize_data(transport: &dyn Transport, traj: &Trajectory, label: &str) -> Result<Summary, LlmError> {
    let req = ChatRequest::summary(data_prompt(traj, DEFAULT_MAX_ROWS), format!("{label}/summary-data"));
    Ok(Summary {
        text: transport.chat(&req)?.text,
        template_version: DATA_TEMPLATE_VERSION.into(),
    })
}

pub fn summarize_image(
    transport: &dyn Transport,
    image: ImagePayload,
    n: usize,
    label: &str,
) -> Result<Summary, LlmError> {
    let req = ChatRequest::summary(image_prompt(n), format!("{label}/summary-image"));
    Ok(Summary {
        text: chat_image(transport, req, image)?.text,
        template_version: IMAGE_TEMPLATE_VERSION.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn ramp(k: usize, n: usize) -> Trajectory {
        let t: Vec<f64> = (0..k).map(|i| i as f64 * 0.5).collect();
        let x = DMatrix::from_fn(k, n, |i, j| (i * (j + 1)) as f64);
        Trajectory::new(t, x).unwrap()
    }

    #[test]
    fn short_trajectories_are_verbatim() {
        let csv = to_csv(&ramp(3, 3), 10);
        assert_eq!(csv, "t,x0,x1,x2\n0,0,0,0\n0.5,1,2,3\n1,2,4,6\n");
    }

    #[test]
    fn downsampling_matches_enumeration() {
        for len in 2..200 {
            for m in 2..40 {
                let idx = downsample_indices(len, m);
                assert!(idx.len() <= m);
                assert_eq!(idx.len(), len.min(m));
                assert_eq!(idx[0], 0);
                assert_eq!(*idx.last().unwrap(), len - 1);
                assert!(idx.windows(2).all(|w| w[0] < w[1]), "len={len} m={m}");
            }
        }
        let csv = to_csv(&ramp(10_000, 1), 500);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 501);
        assert_eq!(lines[1], "0,0");
        assert_eq!(lines[500], "4999.5,9999");
    }

    #[test]
    fn data_prompt_fills_every_slot() {
        let p = data_prompt(&ramp(3, 1), 10);
        assert!(p.starts_with("You will be shown time-series data with 1 dimension.\n"));
        assert!(p.ends_with("The data is as follows:\nt,x0\n0,0\n0.5,1\n1,2\n"));
        assert!(!p.contains('{'));
        let q = image_prompt(3);
        assert!(q.contains("with 3 dimensions."));
        assert!(!q.contains('{'));
    }

    #[test]
    fn summaries_use_summary_temperature_and_labels() {
        use crate::llm::{Fixture, FixtureResponse, ScriptedTransport};
        let t = ScriptedTransport::new(Fixture {
            version: 1,
            multimodal: true,
            responses: vec![
                FixtureResponse { key: "sys/summary-data".into(), text: "smooth".into(), fail: None },
                FixtureResponse { key: "sys/summary-image".into(), text: "spiral".into(), fail: None },
            ],
            ..Default::default()
        });
        let traj = ramp(20, 2);
        let ds = Dataset::new("sys", vec![traj.clone()], vec![traj]).unwrap();
        let mut obs = SystemObservation::new(ds, Some("text".into()));
        obs.summarize(&t, "sys", true, true).unwrap();
        assert_eq!(obs.data_summary.as_ref().unwrap().text, "smooth");
        assert_eq!(obs.image_summary.as_ref().unwrap().template_version, IMAGE_TEMPLATE_VERSION);
        assert_eq!(obs.images.len(), 1);
        assert_eq!(t.usage().requests, 2);
        // Already present summaries are not requested again.
        obs.summarize(&t, "sys", true, true).unwrap();
        assert_eq!(t.usage().requests, 2);
    }
}
