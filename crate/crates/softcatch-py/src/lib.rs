// bindings added at the end
