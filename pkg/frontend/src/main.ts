/**
 * CLI entry: `node dist/main.js --mode {echo|threshold|sam} [--multimask]
 * [--tcp host:port] [--checkpoint path] [--sam-variant vit_b]
 * [--sam-runtime module]`. Without --tcp the server speaks on stdio.
 */

import { BridgeConfig, Mode, createBackend, serveStream, serveTcp } from "./server";

function parseArgs(argv: string[]): { config: BridgeConfig; tcp?: { host: string; port: number } } {
  const config: BridgeConfig = { mode: "threshold", multimask: false };
  let tcp: { host: string; port: number } | undefined;
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    switch (arg) {
      case "--mode": {
        const value = argv[++i];
        if (value !== "echo" && value !== "threshold" && value !== "sam") {
          throw new Error(`unknown mode ${value}`);
        }
        config.mode = value as Mode;
        break;
      }
      case "--multimask":
        config.multimask = true;
        break;
      case "--checkpoint":
        config.checkpoint = argv[++i];
        break;
      case "--sam-variant":
        config.samVariant = argv[++i];
        break;
      case "--sam-runtime":
        config.samRuntime = argv[++i];
        break;
      case "--tcp": {
        const value = argv[++i];
        const sep = value.lastIndexOf(":");
        if (sep < 0) throw new Error("--tcp expects host:port");
        tcp = { host: value.slice(0, sep), port: Number(value.slice(sep + 1)) };
        break;
      }
      default:
        throw new Error(`unknown argument ${arg}`);
    }
  }
  return { config, tcp };
}

function main(): void {
  let parsed;
  try {
    parsed = parseArgs(process.argv.slice(2));
  } catch (err) {
    process.stderr.write(`${err instanceof Error ? err.message : err}\n`);
    process.exit(2);
  }
  let backend;
  try {
    backend = createBackend(parsed.config);
  } catch (err) {
    process.stderr.write(`${err instanceof Error ? err.message : err}\n`);
    process.exit(2);
  }
  if (parsed.tcp) {
    const server = serveTcp(backend, parsed.tcp.host, parsed.tcp.port);
    server.on("listening", () => {
      process.stderr.write(`listening on ${parsed!.tcp!.host}:${parsed!.tcp!.port}\n`);
    });
    process.on("SIGTERM", () => {
      server.close();
      process.exit(0);
    });
  } else {
    serveStream(backend, process.stdin, process.stdout)
      .then(() => process.exit(0))
      .catch((err) => {
        process.stderr.write(`${err instanceof Error ? err.message : err}\n`);
        process.exit(1);
      });
  }
}

main();
