#!/usr/bin/env node
/**
 * Coder-job filter: reads one serialized job batch on stdin, executes every
 * plane, and writes the serialized results to stdout. Malformed input exits
 * with status 2 and the parse error on stderr.
 */

import { readFileSync, writeFileSync } from "node:fs";

import { JobFormatError, runJobs } from "./jobs.js";

try {
  writeFileSync(1, runJobs(readFileSync(0)));
} catch (err) {
  if (err instanceof JobFormatError) {
    process.stderr.write(`fastcoder: ${err.message}\n`);
    process.exit(2);
  }
  throw err;
}
