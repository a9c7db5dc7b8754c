pub mod oracle;
pub mod tiny;
