//! CSV load and dump. The header row names each column as `name:kind`;
//! repeated rows stand for multiplicities.

use std::io::{Read, Write};
use std::sync::Arc;

use crate::columnar::{ColumnBatch, ColumnData};
use crate::error::{Error, Result};
use crate::relation::{Attribute, BagRelation, Schema};
use crate::value::{Kind, Tuple, Value};

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

/// Parses a `name:kind` header into a schema.
pub fn parse_header(relation: &str, header: &csv::StringRecord) -> Result<Schema> {
    let attrs = header
        .iter()
        .map(|col| {
            let (name, kind) = col
                .rsplit_once(':')
                .ok_or_else(|| Error::Parse(format!("column {col:?} lacks a :kind suffix")))?;
            Ok(Attribute::new(name.trim(), kind.trim().parse::<Kind>()?))
        })
        .collect::<Result<Vec<_>>>()?;
    Schema::new(relation, attrs)
}

/// Reads a relation. `expected` checks the header against a known schema.
pub fn read_relation(
    relation: &str,
    input: impl Read,
    expected: Option<&Arc<Schema>>,
) -> Result<BagRelation> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let schema = parse_header(relation, reader.headers().map_err(csv_err)?)?;
    let schema = match expected {
        Some(e) if !e.same_shape(&schema) => {
            return Err(Error::SchemaMismatch(format!(
                "csv header for {relation} does not match the table schema"
            )))
        }
        Some(e) => e.clone(),
        None => Arc::new(schema),
    };
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        rows.push((parse_record(&schema, &record, line + 2)?, 1));
    }
    Ok(BagRelation::from_counts(schema, rows))
}

/// Reads rows straight into columns without consolidating duplicates.
pub fn read_batch(relation: &str, input: impl Read, expected: &Schema) -> Result<ColumnBatch> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let schema = parse_header(relation, reader.headers().map_err(csv_err)?)?;
    if !expected.same_shape(&schema) {
        return Err(Error::SchemaMismatch(format!(
            "csv header for {relation} does not match the table schema"
        )));
    }
    let mut columns: Vec<ColumnData> = schema
        .attributes
        .iter()
        .map(|a| ColumnData::with_capacity(a.kind, 0))
        .collect();
    let mut multiplicities = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut line = 1;
    while reader.read_record(&mut record).map_err(csv_err)? {
        line += 1;
        let t = parse_record(&schema, &record, line)?;
        for (c, v) in columns.iter_mut().zip(t.values()) {
            c.push(v)?;
        }
        multiplicities.push(1);
    }
    Ok(ColumnBatch {
        columns: columns.into_iter().map(Arc::new).collect(),
        multiplicities: Arc::new(multiplicities),
    })
}

pub fn parse_record(schema: &Schema, record: &csv::StringRecord, line: usize) -> Result<Tuple> {
    if record.len() != schema.arity() {
        return Err(Error::Parse(format!(
            "line {line}: expected {} fields, got {}",
            schema.arity(),
            record.len()
        )));
    }
    let values = record
        .iter()
        .zip(&schema.attributes)
        .map(|(field, attr)| {
            attr.kind
                .parse(field)
                .map_err(|e| Error::Parse(format!("line {line}: {e}")))
        })
        .collect::<Result<Vec<Value>>>()?;
    Ok(Tuple::new(values))
}

pub fn header_of(schema: &Schema) -> Vec<String> {
    schema
        .attributes
        .iter()
        .map(|a| format!("{}:{}", a.name, a.kind))
        .collect()
}

/// Writes a relation, repeating rows by multiplicity, in sorted order.
pub fn write_relation(rel: &BagRelation, output: impl Write) -> Result<()> {
    let mut writer = csv::Writer::from_writer(output);
    writer.write_record(header_of(rel.schema())).map_err(csv_err)?;
    for (t, n) in rel.sorted_rows() {
        let fields: Vec<String> = t.values().iter().map(Value::to_string).collect();
        for _ in 0..n {
            writer.write_record(&fields).map_err(csv_err)?;
        }
    }
    writer.flush()?;
    Ok(())
}
