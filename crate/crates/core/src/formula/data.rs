use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One column of a [`DataTable`]. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Categorical {
        levels: Vec<String>,
        codes: Vec<Option<usize>>,
    },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            Column::Numeric(v) => v[row].is_none(),
            Column::Categorical { codes, .. } => codes[row].is_none(),
        }
    }

    fn cell_string(&self, row: usize) -> String {
        match self {
            Column::Numeric(v) => v[row].map(format_number).unwrap_or_else(|| "NA".into()),
            Column::Categorical { levels, codes } => codes[row]
                .map(|c| levels[c].clone())
                .unwrap_or_else(|| "NA".into()),
        }
    }

    /// Categorical view of this column. Numeric columns are converted using
    /// their printed values, levels ordered by first appearance.
    pub fn as_categorical(&self) -> (Vec<String>, Vec<Option<usize>>) {
        match self {
            Column::Categorical { levels, codes } => (levels.clone(), codes.clone()),
            Column::Numeric(v) => {
                let cells: Vec<Option<String>> = v.iter().map(|x| x.map(format_number)).collect();
                categorize(&cells)
            }
        }
    }

    fn take_rows(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Categorical { levels, codes } => Column::Categorical {
                levels: levels.clone(),
                codes: rows.iter().map(|&r| codes[r]).collect(),
            },
        }
    }
}

fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

fn categorize(cells: &[Option<String>]) -> (Vec<String>, Vec<Option<usize>>) {
    let mut levels: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let codes = cells
        .iter()
        .map(|c| {
            c.as_ref().map(|s| {
                *index.entry(s.clone()).or_insert_with(|| {
                    levels.push(s.clone());
                    levels.len() - 1
                })
            })
        })
        .collect();
    (levels, codes)
}

fn is_missing_token(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t == "NA" || t == "NaN" || t == "nan"
}

/// Named columns of equal length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataTable {
    names: Vec<String>,
    columns: Vec<Column>,
    n_rows: usize,
}

impl DataTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.names.iter().position(|n| n == name).map(|i| &self.columns[i])
    }

    pub fn push_column(&mut self, name: &str, column: Column) -> Result<()> {
        if !self.columns.is_empty() && column.len() != self.n_rows {
            return Err(Error::Data(format!(
                "column `{name}` has {} rows, table has {}",
                column.len(),
                self.n_rows
            )));
        }
        if self.columns.is_empty() {
            self.n_rows = column.len();
        }
        if let Some(i) = self.names.iter().position(|n| n == name) {
            self.columns[i] = column;
        } else {
            self.names.push(name.to_string());
            self.columns.push(column);
        }
        Ok(())
    }

    pub fn with_numeric(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        self.push_column(name, Column::Numeric(values.into_iter().map(Some).collect()))?;
        Ok(self)
    }

    /// Adds a categorical column with levels ordered by first appearance.
    pub fn with_categorical<S: AsRef<str>>(mut self, name: &str, values: &[S]) -> Result<Self> {
        let cells: Vec<Option<String>> = values.iter().map(|s| Some(s.as_ref().to_string())).collect();
        let (levels, codes) = categorize(&cells);
        self.push_column(name, Column::Categorical { levels, codes })?;
        Ok(self)
    }

    /// Adds a categorical column with an explicit level order. Values not in
    /// `levels` are an error; levels without rows are allowed here and
    /// rejected later if used as a grouping factor.
    pub fn with_categorical_levels<S: AsRef<str>>(mut self, name: &str, values: &[S], levels: &[&str]) -> Result<Self> {
        let codes = values
            .iter()
            .map(|v| {
                levels
                    .iter()
                    .position(|l| *l == v.as_ref())
                    .map(Some)
                    .ok_or_else(|| Error::Data(format!("value `{}` is not a level of `{name}`", v.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        let levels = levels.iter().map(|s| s.to_string()).collect();
        self.push_column(name, Column::Categorical { levels, codes })?;
        Ok(self)
    }

    /// Reads RFC 4180 CSV with a header row. Columns whose non-missing cells
    /// all parse as numbers are numeric unless listed in `factors`.
    pub fn from_csv_reader<R: Read>(reader: R, factors: &[String]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        for f in factors {
            if !headers.contains(f) {
                return Err(Error::MissingColumn(f.clone()));
            }
        }
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for record in rdr.records() {
            let record = record?;
            for (j, cell) in record.iter().enumerate() {
                raw[j].push(cell.to_string());
            }
        }
        let mut table = DataTable::new();
        for (name, cells) in headers.iter().zip(raw) {
            let forced = factors.iter().any(|f| f == name);
            let parsed: Option<Vec<Option<f64>>> = if forced {
                None
            } else {
                cells
                    .iter()
                    .map(|c| {
                        if is_missing_token(c) {
                            Some(None)
                        } else {
                            c.trim().parse::<f64>().ok().map(Some)
                        }
                    })
                    .collect()
            };
            let column = match parsed {
                Some(values) => Column::Numeric(values),
                None => {
                    let cells: Vec<Option<String>> = cells
                        .iter()
                        .map(|c| (!is_missing_token(c)).then(|| c.trim().to_string()))
                        .collect();
                    let (levels, codes) = categorize(&cells);
                    Column::Categorical { levels, codes }
                }
            };
            table.push_column(name, column)?;
        }
        Ok(table)
    }

    pub fn from_csv_path(path: impl AsRef<Path>, factors: &[String]) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_csv_reader(std::io::BufReader::new(file), factors)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        for row in 0..self.n_rows {
            w.write_record(self.columns.iter().map(|c| c.cell_string(row)))?;
        }
        w.flush()?;
        Ok(())
    }

    /// New table whose row `i` is row `rows[i]` of `self`.
    pub fn take_rows(&self, rows: &[usize]) -> DataTable {
        DataTable {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c.take_rows(rows)).collect(),
            n_rows: rows.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_infers_types_and_missing() {
        let text = "y,x,site\n1,0.5,a\n2,1.5,b\n3,NA,a\n";
        let t = DataTable::from_csv_reader(text.as_bytes(), &[]).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert!(matches!(t.column("y"), Some(Column::Numeric(_))));
        assert!(t.column("x").unwrap().is_missing(2));
        match t.column("site").unwrap() {
            Column::Categorical { levels, codes } => {
                assert_eq!(levels, &["a", "b"]);
                assert_eq!(codes, &[Some(0), Some(1), Some(0)]);
            }
            _ => panic!("expected categorical"),
        }
    }

    #[test]
    fn forced_factor_and_quoting() {
        let text = "Year,label\n2010,\"a,b\"\n2003,c\n";
        let t = DataTable::from_csv_reader(text.as_bytes(), &["Year".to_string()]).unwrap();
        match t.column("Year").unwrap() {
            Column::Categorical { levels, .. } => assert_eq!(levels, &["2010", "2003"]),
            _ => panic!(),
        }
        match t.column("label").unwrap() {
            Column::Categorical { levels, .. } => assert_eq!(levels[0], "a,b"),
            _ => panic!(),
        }
    }

    #[test]
    fn csv_round_trip() {
        let t = DataTable::new()
            .with_numeric("y", vec![1.0, 2.5])
            .unwrap()
            .with_categorical("g", &["u", "v"])
            .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "y,g\n1,u\n2.5,v\n");
        let back = DataTable::from_csv_reader(buf.as_slice(), &[]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let t = DataTable::new().with_numeric("a", vec![1.0, 2.0]).unwrap();
        assert!(t.with_numeric("b", vec![1.0]).is_err());
    }
}
