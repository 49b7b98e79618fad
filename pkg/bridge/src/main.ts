import { BridgeConfig, DEFAULT_CONFIG, createServer } from "./server";

function parseArgs(argv: string[]): BridgeConfig {
  const config = { ...DEFAULT_CONFIG };
  for (let i = 0; i < argv.length; i++) {
    const next = () => {
      const v = argv[++i];
      if (v === undefined) throw new Error(`missing value for ${argv[i - 1]}`);
      return v;
    };
    switch (argv[i]) {
      case "--port":
        config.port = Number(next());
        break;
      case "--model":
        config.model = next();
        break;
      case "--device":
        config.device = next();
        break;
      case "--guidance-default":
        config.guidanceDefault = Number(next());
        break;
      case "--data-std":
        config.dataStd = Number(next());
        break;
      case "--use-vae":
        config.useVae = next() === "true";
        break;
      case "--guidance-target-only":
        config.guidanceBothBranches = false;
        break;
      default:
        throw new Error(`unknown flag ${argv[i]}`);
    }
  }
  return config;
}

function main(): void {
  let config: BridgeConfig;
  try {
    config = parseArgs(process.argv.slice(2));
  } catch (err) {
    console.error(err instanceof Error ? err.message : String(err));
    process.exit(2);
  }
  const server = createServer(config);
  server.listen(config.port, "127.0.0.1", () => {
    const addr = server.address();
    const port = typeof addr === "object" && addr ? addr.port : config.port;
    console.log(`provider-bridge [${config.model}] listening on 127.0.0.1:${port}`);
  });
  const stop = () => server.close(() => process.exit(0));
  process.on("SIGINT", stop);
  process.on("SIGTERM", stop);
}

main();
