import { createApp } from './service.js';
import { HashEncoder } from './encoder.js';

// Service entry: node dist/server.js [--port N] [--dim N] [--seed N]
function flag(name: string, fallback: number): number {
  const i = process.argv.indexOf(`--${name}`);
  if (i < 0 || i + 1 >= process.argv.length) return fallback;
  const value = Number(process.argv[i + 1]);
  if (!Number.isFinite(value)) throw new Error(`--${name} wants a number`);
  return value;
}

const port = flag('port', 8941);
const encoder = new HashEncoder(flag('dim', 768), flag('seed', 0));
const server = createApp(encoder).listen(port, () => {
  console.log(`embedder-service on :${port} dim=${encoder.dim} model=${encoder.modelTag}`);
});

process.on('SIGINT', () => server.close(() => process.exit(0)));
process.on('SIGTERM', () => server.close(() => process.exit(0)));
