use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::{DateTime, FixedOffset};
use log::warn;

use crate::error::{Error, Result};

pub const MANIFEST_COLUMNS: [&str; 4] = ["camera_id", "timestamp", "image_path", "temperature_c"];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%:z";

/// One captured frame and the temperature measured at capture time.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub camera_id: String,
    pub timestamp: DateTime<FixedOffset>,
    pub image_path: PathBuf,
    pub temperature_c: f64,
}

impl ImageRecord {
    pub fn new(
        camera_id: impl Into<String>,
        timestamp: DateTime<FixedOffset>,
        image_path: impl Into<PathBuf>,
        temperature_c: f64,
    ) -> Result<Self> {
        let record = Self {
            camera_id: camera_id.into(),
            timestamp,
            image_path: image_path.into(),
            temperature_c,
        };
        record.validate()?;
        Ok(record)
    }

    fn validate(&self) -> Result<()> {
        if self.camera_id.is_empty() {
            return Err(Error::InvalidInput("empty camera id".into()));
        }
        if self.image_path.as_os_str().is_empty() {
            return Err(Error::InvalidInput("empty image path".into()));
        }
        if !self.temperature_c.is_finite() {
            return Err(Error::InvalidInput(format!("temperature {} is not finite", self.temperature_c)));
        }
        Ok(())
    }

    /// Ordering used everywhere records are returned: camera, instant, path.
    pub(crate) fn sort_key(&self) -> (&str, DateTime<FixedOffset>, &Path) {
        (&self.camera_id, self.timestamp, &self.image_path)
    }
}

pub fn parse_timestamp(text: &str) -> Result<DateTime<FixedOffset>> {
    DateTime::parse_from_rfc3339(text.trim())
        .map_err(|e| Error::InvalidInput(format!("bad timestamp '{text}': {e}")))
}

pub fn format_timestamp(ts: &DateTime<FixedOffset>) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ImageRecord>,
    /// Rows dropped because a field failed to parse.
    pub skipped: usize,
}

pub(crate) fn sort_records(records: &mut [ImageRecord]) {
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

/// Reads a manifest CSV. Relative image paths are resolved against the
/// manifest's directory; extra columns are ignored.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: unreadable header: {e}", path.display())))?
        .clone();
    let mut columns = [0usize; 4];
    for (slot, name) in columns.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("{}: missing required column '{name}'", path.display())))?;
    }

    let mut records = Vec::new();
    let mut skipped = 0;
    for (line, row) in reader.records().enumerate() {
        let parsed = row
            .map_err(|e| Error::InvalidInput(e.to_string()))
            .and_then(|row| parse_row(&row, &columns, &base));
        match parsed {
            Ok(r) => records.push(r),
            Err(e) => {
                skipped += 1;
                warn!("{}: skipping data row {}: {e}", path.display(), line + 1);
            }
        }
    }
    if skipped > 0 {
        warn!("{}: skipped {skipped} unparseable row(s)", path.display());
    }
    sort_records(&mut records);
    Ok(Manifest { records, skipped })
}

fn parse_row(row: &csv::StringRecord, columns: &[usize; 4], base: &Path) -> Result<ImageRecord> {
    let field = |i: usize| {
        row.get(columns[i])
            .ok_or_else(|| Error::InvalidInput(format!("missing field '{}'", MANIFEST_COLUMNS[i])))
    };
    let timestamp = parse_timestamp(field(1)?)?;
    let raw_path = field(2)?;
    if raw_path.is_empty() {
        return Err(Error::InvalidInput("empty image path".into()));
    }
    let raw_path = Path::new(raw_path);
    let image_path = if raw_path.is_absolute() {
        raw_path.to_path_buf()
    } else {
        base.join(raw_path)
    };
    let temp_text = field(3)?;
    let temperature_c: f64 = temp_text
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad temperature '{temp_text}'")))?;
    ImageRecord::new(field(0)?, timestamp, image_path, temperature_c)
}

/// Writes records as a manifest. Paths under the manifest's directory are
/// stored relative to it so the tree can be moved as a whole.
pub fn write_manifest(path: impl AsRef<Path>, records: &[ImageRecord]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut writer = csv::Writer::from_path(path).map_err(csv_to_io)?;
    writer.write_record(MANIFEST_COLUMNS).map_err(csv_to_io)?;
    for r in records {
        let rel = r.image_path.strip_prefix(base).unwrap_or(&r.image_path);
        writer
            .write_record([
                r.camera_id.as_str(),
                &format_timestamp(&r.timestamp),
                &rel.to_string_lossy(),
                &r.temperature_c.to_string(),
            ])
            .map_err(csv_to_io)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_to_io(e: csv::Error) -> Error {
    Error::Io(e.into())
}
