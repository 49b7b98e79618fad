/** HTTP service: GET /v1/health, POST /v1/gradient (protocol version 1). */

import * as http from "node:http";

import { GaussianTextBackend, requestNoiseSeed } from "./denoiser";
import { WireError, decodeTensor, encodeTensor, sameShape } from "./tensor";

export const PROTOCOL_VERSION = "1";

export interface BridgeConfig {
  port: number;
  model: string;
  device: string;
  guidanceDefault: number;
  useVae: boolean; // reserved for real-model backends; the deterministic
  // backend treats incoming grids as latents directly
  dataStd: number;
  guidanceBothBranches: boolean;
}

export const DEFAULT_CONFIG: BridgeConfig = {
  port: 8631,
  model: "gaussian-analytic",
  device: "cpu",
  guidanceDefault: 7.5,
  useVae: false,
  dataStd: 0.0,
  guidanceBothBranches: true,
};

interface GradientRequest {
  protocol_version: string;
  latent: { shape: number[]; dtype: string; data: string };
  source_latent: { shape: number[]; dtype: string; data: string };
  timestep: number;
  prompt_source: string;
  prompt_target: string;
  guidance_scale?: number;
}

function errorBody(code: string, message: string): string {
  return JSON.stringify({ error: { code, message } });
}

export function handleGradient(
  backend: GaussianTextBackend,
  config: BridgeConfig,
  body: string,
): { status: number; payload: string } {
  let req: GradientRequest;
  try {
    req = JSON.parse(body);
  } catch {
    return { status: 400, payload: errorBody("bad_request", "body is not JSON") };
  }
  try {
    if (req.protocol_version !== PROTOCOL_VERSION) {
      return {
        status: 200,
        payload: errorBody(
          "protocol_version",
          `server speaks ${PROTOCOL_VERSION}, got ${req.protocol_version}`,
        ),
      };
    }
    if (typeof req.prompt_source !== "string" || typeof req.prompt_target !== "string") {
      return { status: 200, payload: errorBody("bad_request", "prompts must be strings") };
    }
    const latent = decodeTensor(req.latent);
    const source = decodeTensor(req.source_latent);
    if (!sameShape(latent.shape, source.shape)) {
      return {
        status: 200,
        payload: errorBody(
          "shape_mismatch",
          `latent ${JSON.stringify(latent.shape)} vs source ${JSON.stringify(source.shape)}`,
        ),
      };
    }
    const t = req.timestep;
    if (!Number.isInteger(t) || t < 1 || t > backend.schedule.timesteps) {
      return { status: 200, payload: errorBody("bad_request", `bad timestep ${t}`) };
    }
    const guidance =
      typeof req.guidance_scale === "number" ? req.guidance_scale : config.guidanceDefault;
    const seed = requestNoiseSeed(
      req.latent.data,
      req.source_latent.data,
      t,
      req.prompt_source,
      req.prompt_target,
    );
    const grad = backend.ddsGradient(
      latent.values,
      source.values,
      t,
      req.prompt_source,
      req.prompt_target,
      guidance,
      seed,
    );
    return {
      status: 200,
      payload: JSON.stringify({ gradient: encodeTensor(grad, latent.shape) }),
    };
  } catch (err) {
    if (err instanceof WireError) {
      return { status: 200, payload: errorBody(err.code, err.message) };
    }
    const message = err instanceof Error ? err.message : String(err);
    return { status: 200, payload: errorBody("internal", message) };
  }
}

export function createServer(config: BridgeConfig = DEFAULT_CONFIG): http.Server {
  const backend = new GaussianTextBackend(undefined, {
    dataStd: config.dataStd,
    guidanceBothBranches: config.guidanceBothBranches,
  });
  return http.createServer((req, res) => {
    const respond = (status: number, payload: string) => {
      res.writeHead(status, { "Content-Type": "application/json" });
      res.end(payload);
    };
    if (req.method === "GET" && req.url === "/v1/health") {
      respond(200, JSON.stringify({ protocol_version: PROTOCOL_VERSION }));
      return;
    }
    if (req.method === "POST" && req.url === "/v1/gradient") {
      const chunks: Buffer[] = [];
      req.on("data", (c: Buffer) => chunks.push(c));
      req.on("end", () => {
        // one request at a time keeps the deterministic backend serialized
        const { status, payload } = handleGradient(
          backend,
          config,
          Buffer.concat(chunks).toString("utf-8"),
        );
        respond(status, payload);
      });
      req.on("error", () => respond(400, errorBody("bad_request", "stream error")));
      return;
    }
    respond(404, errorBody("not_found", `no route ${req.method} ${req.url}`));
  });
}
