/* tslint:disable */
/* eslint-disable */

/**
 * A pushing table with one object and the effector.
 */
export class PushWorld {
    free(): void;
    [Symbol.dispose](): void;
    constructor(kind_name: string, a: number, b: number, mass: number, mu: number, seed: bigint);
    /**
     * Occupancy at the object's current orientation.
     */
    oriented_grid(): Float64Array;
    /**
     * One random-shooting step toward `(gx, gy)` using the true dynamics as
     * the model; returns the executed push.
     */
    plan_step(gx: number, gy: number, sequences: number, horizon: number): Float64Array;
    /**
     * Moves the effector by `(dx, dy)` metres over one step.
     */
    push(dx: number, dy: number): Float64Array;
    /**
     * Moves the effector up to `reach` metres toward `(x, y)`.
     */
    push_toward(x: number, y: number, reach: number): Float64Array;
    /**
     * `[px, py, theta, vx, vy, omega, ex, ey]`.
     */
    state(): Float64Array;
    table_size(): number;
}

/**
 * Side length of every occupancy grid.
 */
export function grid_side(): number;

/**
 * `steps` steps of constant `force` on a terrain drawn from `seed`:
 * flattened `[x, v, reward, terrain_param]` per step.
 */
export function loco_rollout(variant: string, novel: boolean, seed: bigint, force: number, steps: number): Float64Array;

/**
 * Row-major occupancy of shape `kind` with box `a` x `b` metres, rotated by
 * `theta` radians.
 */
export function shape_grid(kind_name: string, a: number, b: number, theta: number): Float64Array;

/**
 * Shape kinds accepted by [`shape_grid`] and [`PushWorld::new`].
 */
export function shape_kinds(): string[];

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_pushworld_free: (a: number, b: number) => void;
    readonly grid_side: () => number;
    readonly loco_rollout: (a: number, b: number, c: number, d: bigint, e: number, f: number) => [number, number, number, number];
    readonly pushworld_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
    readonly pushworld_oriented_grid: (a: number) => [number, number];
    readonly pushworld_plan_step: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly pushworld_push: (a: number, b: number, c: number) => [number, number];
    readonly pushworld_push_toward: (a: number, b: number, c: number, d: number) => [number, number];
    readonly pushworld_state: (a: number) => [number, number];
    readonly pushworld_table_size: (a: number) => number;
    readonly shape_grid: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly shape_kinds: () => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
