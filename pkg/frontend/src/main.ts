#!/usr/bin/env node
// maxdamp-report --in <dir> --out <dir>

import { renderReport } from './render.js';
import { SchemaError } from './schema.js';

function parseArgs(argv: string[]): { inDir: string; outDir: string } {
  let inDir: string | null = null;
  let outDir: string | null = null;
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === '--in') inDir = argv[++i];
    else if (argv[i] === '--out') outDir = argv[++i];
    else if (argv[i] === '--help' || argv[i] === '-h') {
      console.log('usage: maxdamp-report --in <results dir> --out <figure dir>');
      process.exit(0);
    } else {
      throw new SchemaError(`unknown argument ${argv[i]}`);
    }
  }
  if (!inDir || !outDir) throw new SchemaError('both --in and --out are required');
  return { inDir, outDir };
}

try {
  const { inDir, outDir } = parseArgs(process.argv.slice(2));
  const written = renderReport(inDir, outDir);
  for (const p of written) console.log(p);
} catch (e) {
  console.error(`maxdamp-report: ${(e as Error).message}`);
  process.exit(1);
}
