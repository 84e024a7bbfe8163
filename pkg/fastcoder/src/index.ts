export {
  CorruptStreamError,
  RangeDecoder,
  RangeEncoder,
  TOTAL_FREQ,
  decodePlane,
  encodePlane,
} from "./rangecoder.js";
export {
  DECODE,
  ENCODE,
  JobFormatError,
  parseJobs,
  parseResults,
  runJobs,
  serializeJobs,
} from "./jobs.js";
export type { Plane } from "./jobs.js";
