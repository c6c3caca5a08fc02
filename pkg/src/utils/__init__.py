# Shared helpers: retry, parallel fan-out, output files
