//! Score-table CSV export and raw-delta fixture parsing.
//!
//! The exported columns are `image, delta_flava, delta_clip, delta_flava_z,
//! delta_clip_z, delta_combined`: the image-delta column comes first, the
//! text-delta column second.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::ScoreTable;
use crate::model::SimilarityDelta;

pub const SCORE_TABLE_HEADER: [&str; 6] = [
    "image",
    "delta_flava",
    "delta_clip",
    "delta_flava_z",
    "delta_clip_z",
    "delta_combined",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    /// Fixed 4 decimals.
    #[default]
    Fixed4,
    /// Shortest representation that round-trips.
    Full,
}

/// Renders a real for tabular output; never emits `-0.0000`.
pub fn fmt_real(x: f64, precision: Precision) -> String {
    let s = match precision {
        Precision::Fixed4 => format!("{x:.4}"),
        Precision::Full => format!("{x:?}"),
    };
    match s.strip_prefix('-') {
        Some(rest) if rest.chars().all(|c| c == '0' || c == '.') => rest.to_string(),
        _ => s,
    }
}

pub fn write_score_table(table: &ScoreTable, precision: Precision) -> String {
    let mut out = SCORE_TABLE_HEADER.join(",");
    out.push('\n');
    for r in &table.rows {
        let cells = [
            fmt_real(r.delta_image, precision),
            fmt_real(r.delta_text, precision),
            fmt_real(r.z_image, precision),
            fmt_real(r.z_text, precision),
            fmt_real(r.combined, precision),
        ];
        out.push_str(&csv_field(&r.sample_id));
        for c in cells {
            out.push(',');
            out.push_str(&c);
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row of a six-column score table as read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub image: String,
    pub delta_flava: f64,
    pub delta_clip: f64,
    pub delta_flava_z: Option<f64>,
    pub delta_clip_z: Option<f64>,
    pub delta_combined: Option<f64>,
}

/// Strips a trailing image extension so `Sample 35.png` and `Sample 35` agree.
pub fn sample_id_from_image(image: &str) -> String {
    let t = image.trim();
    match t.rsplit_once('.') {
        Some((stem, ext))
            if !stem.is_empty()
                && matches!(
                    ext.to_ascii_lowercase().as_str(),
                    "png" | "jpg" | "jpeg" | "tif" | "tiff" | "bmp"
                ) =>
        {
            stem.to_string()
        }
        _ => t.to_string(),
    }
}

/// Reads a score table or raw-delta fixture. `image`, `delta_flava` and
/// `delta_clip` are required; the standardized columns are optional.
pub fn read_table<R: Read>(reader: R) -> Result<Vec<TableRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::parse(1, format!("missing column '{name}'")));
    let image = need("image")?;
    let flava = need("delta_flava")?;
    let clip = need("delta_clip")?;
    let flava_z = col("delta_flava_z");
    let clip_z = col("delta_clip_z");
    let combined = col("delta_combined");

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(line, e.to_string()))?;
        let num = |idx: usize, name: &str| -> Result<f64> {
            let raw = rec
                .get(idx)
                .ok_or_else(|| Error::parse(line, format!("missing value for '{name}'")))?;
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::parse(line, format!("'{raw}' is not a number ({name})")))?;
            if !v.is_finite() {
                return Err(Error::parse(line, format!("non-finite value in '{name}'")));
            }
            Ok(v)
        };
        let opt = |idx: Option<usize>, name: &str| idx.map(|i| num(i, name)).transpose();
        rows.push(TableRow {
            image: rec.get(image).unwrap_or_default().to_string(),
            delta_flava: num(flava, "delta_flava")?,
            delta_clip: num(clip, "delta_clip")?,
            delta_flava_z: opt(flava_z, "delta_flava_z")?,
            delta_clip_z: opt(clip_z, "delta_clip_z")?,
            delta_combined: opt(combined, "delta_combined")?,
        });
    }
    Ok(rows)
}

pub fn read_table_file(path: &Path) -> Result<Vec<TableRow>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_table(f).map_err(|e| e.with_path(path))
}

/// Raw deltas from a fixture, ready for [`crate::fusion::score_deltas`].
pub fn fixture_deltas(rows: &[TableRow], criterion_id: &str) -> Result<Vec<SimilarityDelta>> {
    let mut seen = std::collections::BTreeSet::new();
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let sample_id = sample_id_from_image(&r.image);
            if !seen.insert(sample_id.clone()) {
                return Err(Error::parse(i + 2, format!("duplicate sample '{sample_id}'")));
            }
            Ok(SimilarityDelta {
                sample_id,
                criterion_id: criterion_id.to_string(),
                delta_text: r.delta_clip,
                delta_image: r.delta_flava,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::score_deltas;
    use crate::model::FusionConfig;

    #[test]
    fn fixed_rendering() {
        assert_eq!(fmt_real(1.08705, Precision::Fixed4), "1.0871");
        assert_eq!(fmt_real(-0.00001, Precision::Fixed4), "0.0000");
        assert_eq!(fmt_real(-0.25, Precision::Fixed4), "-0.2500");
        assert_eq!(fmt_real(0.1, Precision::Full), "0.1");
    }

    #[test]
    fn image_names_map_to_sample_ids() {
        assert_eq!(sample_id_from_image("Sample 35.png"), "Sample 35");
        assert_eq!(sample_id_from_image("Sample 35"), "Sample 35");
        assert_eq!(sample_id_from_image("a.b.tif"), "a.b");
        assert_eq!(sample_id_from_image("v1.2"), "v1.2");
    }

    #[test]
    fn read_raw_and_export() {
        let csv = "image,delta_flava,delta_clip\nSample 1.png,0.1,-0.002\nSample 2.png,-0.05,0.001\n";
        let rows = read_table(csv.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].delta_flava_z, None);
        let d = fixture_deltas(&rows, "EA6").unwrap();
        assert_eq!(d[0].sample_id, "Sample 1");
        assert_eq!(d[0].delta_text, -0.002);
        assert_eq!(d[0].delta_image, 0.1);

        let t = score_deltas("EA6", &d, &FusionConfig::default(), None).unwrap();
        let out = write_score_table(&t, Precision::Fixed4);
        let mut lines = out.lines();
        assert_eq!(lines.next().unwrap(), SCORE_TABLE_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), "Sample 1,0.1000,-0.0020,1.0000,-1.0000,0.0000");
        let back = read_table(out.as_bytes()).unwrap();
        assert_eq!(back[1].delta_combined, Some(0.0));
    }

    #[test]
    fn parse_errors_cite_line() {
        let csv = "image,delta_flava,delta_clip\na,0.1,0.2\nb,oops,0.1\n";
        match read_table(csv.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_table("image,delta_clip\n".as_bytes()).is_err());
        let dup = "image,delta_flava,delta_clip\na,0.1,0.2\na.png,0.1,0.2\n";
        assert!(fixture_deltas(&read_table(dup.as_bytes()).unwrap(), "x").is_err());
    }
}
